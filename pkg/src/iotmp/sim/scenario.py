"""Scripted simulations: a JSON scenario spins up a deployment, injects
faults, runs timed probes and returns the trace plus a probe report.

Script shape::

    {
      "seed": 42,
      "managers": 3,
      "fleet": [{"n": 10, "profile": "thermo", "method": "direct"}],
      "duration": 120,
      "auto_approve": true,
      "faults": [
        {"time": 30, "kind": "disconnect", "target": "ag-001", "duration": 5},
        {"time": 40, "kind": "drop_pct", "target": "m1", "value": 30,
         "duration": 10, "kinds": ["ACK"]},
        {"time": 60, "kind": "manager_outage", "target": "m2", "duration": 8}
      ],
      "probes": [
        {"time": 100, "op": "get", "mtid": "mt-001",
         "attribute": "Temperature", "expect": {"status": 200}}
      ]
    }

Times are offsets from the simulated start. Identical (seed, script) pairs
produce bitwise-identical traces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from iotmp.errors import ScriptInvalid, UnknownTarget
from iotmp.sim.fixtures import PROFILES, Deployment
from iotmp.sim.kernel import Kernel
from iotmp.sim.trace import Trace

FAULT_KINDS = frozenset({"disconnect", "drop_pct", "manager_outage"})
PROBE_OPS = frozenset({"get", "get_via_manager", "approve", "pending", "records",
                       "phase", "actuate", "put_profile", "put_policies"})


@dataclass(frozen=True)
class Fault:
    time: float
    kind: str
    target: str
    duration: float = 0.0
    value: float = 0.0
    kinds: tuple = ()


@dataclass(frozen=True)
class Probe:
    time: float
    op: str
    args: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)


@dataclass
class ScenarioScript:
    seed: int = 0
    managers: int = 1
    fleet: tuple = ()          # ({"n", "profile", "method"}, ...)
    duration: float = 60.0
    auto_approve: bool = True
    settle: float = 5.0        # run time before the first fleet spawn probe
    faults: tuple = ()
    probes: tuple = ()

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioScript":
        if not isinstance(obj, dict):
            raise ScriptInvalid("script must be a JSON object")
        known = {"seed", "managers", "fleet", "duration", "auto_approve",
                 "settle", "faults", "probes"}
        extra = set(obj) - known
        if extra:
            raise ScriptInvalid(f"unknown script keys: {sorted(extra)}")
        faults = tuple(
            Fault(time=float(f["time"]), kind=f["kind"], target=str(f["target"]),
                  duration=float(f.get("duration", 0.0)),
                  value=float(f.get("value", 0.0)),
                  kinds=tuple(f.get("kinds", ())))
            for f in obj.get("faults", ()))
        probes = tuple(
            Probe(time=float(p["time"]), op=p["op"],
                  args={k: v for k, v in p.items()
                        if k not in ("time", "op", "expect")},
                  expect=dict(p.get("expect", {})))
            for p in obj.get("probes", ()))
        script = cls(
            seed=int(obj.get("seed", 0)),
            managers=int(obj.get("managers", 1)),
            fleet=tuple(dict(f) for f in obj.get("fleet", ())),
            duration=float(obj.get("duration", 60.0)),
            auto_approve=bool(obj.get("auto_approve", True)),
            settle=float(obj.get("settle", 5.0)),
            faults=faults,
            probes=probes,
        )
        script.validate()
        return script

    @classmethod
    def load(cls, path: str) -> "ScenarioScript":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except OSError as exc:
            raise ScriptInvalid(f"cannot read script: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ScriptInvalid(f"script is not JSON: {exc}") from None
        return cls.from_json(obj)

    def validate(self) -> None:
        if self.managers < 1:
            raise ScriptInvalid("managers must be >= 1")
        if self.duration <= 0:
            raise ScriptInvalid("duration must be positive")
        for spec in self.fleet:
            n = spec.get("n", 0)
            if not isinstance(n, int) or n < 1:
                raise ScriptInvalid(f"fleet entry needs n >= 1, got {n!r}")
            profile = spec.get("profile", "thermo")
            if profile not in PROFILES:
                raise ScriptInvalid(f"unknown device profile {profile!r}")
            if spec.get("method", "direct") not in ("direct", "associate"):
                raise ScriptInvalid(f"unknown join method {spec.get('method')!r}")
        for fault in self.faults:
            if fault.kind not in FAULT_KINDS:
                raise ScriptInvalid(f"unknown fault kind {fault.kind!r}")
            if fault.time < 0 or fault.duration < 0:
                raise ScriptInvalid("fault times must be nonnegative")
            if fault.kind == "drop_pct" and not (0 <= fault.value <= 100):
                raise ScriptInvalid("drop_pct needs value in [0, 100]")
        for probe in self.probes:
            if probe.op not in PROBE_OPS:
                raise ScriptInvalid(f"unknown probe op {probe.op!r}")
            if probe.time < 0:
                raise ScriptInvalid("probe times must be nonnegative")


@dataclass
class ScenarioResult:
    trace: Trace
    report: list
    deployment: Deployment

    @property
    def passed(self) -> bool:
        return all(r["ok"] for r in self.report)

    def digest(self) -> str:
        return self.trace.digest()

    def summary(self) -> dict:
        return {
            "probes": len(self.report),
            "failed": [r for r in self.report if not r["ok"]],
            "events": len(self.trace),
            "digest": self.digest(),
        }


def inject_fault(dep: Deployment, target: str, kind: str, duration: float = 0.0,
                 value: float = 0.0, kinds=()) -> None:
    """Apply one fault now; recovery is scheduled automatically."""
    k = dep.kernel
    if kind == "disconnect":
        agent = dep.agent(target)  # raises UnknownTarget
        agent.stop()
        k.trace("fault", "disconnect", target=target, duration=duration)
        if duration > 0:
            k.call_later(duration, agent.start)
    elif kind == "drop_pct":
        mgr = dep.manager(target)
        address = mgr.config.agent_address
        dep.net.set_drop(address, value, kinds=set(kinds) or None)
        k.trace("fault", "drop_pct", target=target, pct=value,
                kinds=sorted(kinds), duration=duration)
        if duration > 0:
            k.call_later(duration, dep.net.set_drop, address, 0.0)
    elif kind == "manager_outage":
        mgr = dep.manager(target)
        netloc = mgr.config.api_host.split("://", 1)[-1]
        dep.net.take_offline(mgr.config.agent_address)
        dep.http.take_offline(netloc)
        k.trace("fault", "manager_outage", target=target, duration=duration)

        def recover():
            dep.net.bring_online(mgr.config.agent_address)
            dep.http.bring_online(netloc)
            k.trace("fault", "manager_recovered", target=target)

        if duration > 0:
            k.call_later(duration, recover)
    else:
        raise ScriptInvalid(f"unknown fault kind {kind!r}")


def run_scenario(script: ScenarioScript) -> ScenarioResult:
    script.validate()
    kernel = Kernel(seed=script.seed)
    start = kernel.now()
    dep = Deployment(kernel, managers=script.managers,
                     auto_approve=script.auto_approve)
    ops_token = dep.app_token("scenario-ops", "management_app")
    viewer_secret = dep.register_app("scenario-viewer", "iot_app")
    index = 1
    for spec in script.fleet:
        dep.spawn_fleet(spec["n"], profile=spec.get("profile", "thermo"),
                        method=spec.get("method", "direct"), start=index,
                        update_period=spec.get("update_period"))
        index += spec["n"]
    kernel.run_for(script.settle)
    dep.allow("scenario-viewer")
    viewer_token = dep.mint_token("scenario-viewer", viewer_secret)

    for fault in script.faults:
        at = max(0.0, fault.time - (kernel.now() - start))
        kernel.call_later(at, inject_fault, dep, fault.target, fault.kind,
                          fault.duration, fault.value, fault.kinds)

    report: list = []
    for probe in sorted(script.probes, key=lambda p: p.time):
        at = max(0.0, probe.time - (kernel.now() - start))
        kernel.call_later(at, _run_probe, dep, probe, report,
                          viewer_token, ops_token)

    end = start + script.duration
    if kernel.now() < end:
        kernel.run_for(end - kernel.now())
    dep.stop()
    return ScenarioResult(kernel.trace_log, report, dep)


def _run_probe(dep: Deployment, probe: Probe, report: list,
               viewer_token: str, ops_token: str) -> None:
    outcome: dict = {"time": probe.time, "op": probe.op, "args": probe.args}
    try:
        outcome.update(_execute_probe(dep, probe, viewer_token, ops_token))
    except UnknownTarget as exc:
        raise  # a probe naming a nonexistent target is a script bug
    except Exception as exc:  # probe machinery must not kill the run
        outcome.update({"error": f"{type(exc).__name__}: {exc}"})
    outcome["ok"] = _check_expect(probe.expect, outcome)
    dep.kernel.trace("probe", probe.op, ok=outcome["ok"], args=probe.args)
    report.append(outcome)


def _execute_probe(dep: Deployment, probe: Probe, viewer_token: str,
                   ops_token: str) -> dict:
    args = probe.args
    op = probe.op
    if op in ("get", "get_via_manager"):
        mtid = args["mtid"]
        if op == "get" and dep.moms is not None:
            base = "sim://moms"
        else:
            base = dep.owner_of(mtid).config.api_host
        query = "".join(f"&{k}={v}" for k, v in args.get("query", {}).items())
        url = f"{base}/mt/{mtid}/{args['attribute']}?" + query.lstrip("&")
        token = ops_token if args.get("as") == "ops" else viewer_token
        resp = dep.api("GET", url.rstrip("?"), token=token)
        out = {"status": resp.status}
        body = resp.json()
        if isinstance(body, dict):
            if "value" in body:
                out["value"] = body["value"]
                if isinstance(body["value"], dict) and "path" in body["value"]:
                    out["path_len"] = len(body["value"]["path"])
            if "readings" in body:
                out["n"] = len(body["readings"])
        return out
    if op == "actuate":
        mgr = dep.owner_of(args["mtid"])
        resp = dep.api("POST", f"{mgr.config.api_host}/mt/{args['mtid']}/actuation",
                       token=ops_token if args.get("as") == "ops" else viewer_token,
                       body={"name": args["name"], "value": args["value"]})
        return {"status": resp.status}
    if op == "approve":
        agent = dep.agent(args["agentid"])
        statuses = []
        for mgr in dep.managers:
            if agent.agentid in mgr.sm.admissions:
                resp = dep.api("POST",
                               f"{mgr.config.api_host}/agents/{agent.agentid}/approve",
                               token=ops_token)
                statuses.append(resp.status)
        return {"status": min(statuses) if statuses else 404}
    if op == "pending":
        pending = sorted({a.agentid for mgr in dep.managers
                          for a in mgr.sm.pending_agents()})
        return {"pending": pending, "n": len(pending)}
    if op == "records":
        counts = {m.managerid: len(m.store.records) for m in dep.managers}
        return {"records": counts, "total": sum(counts.values())}
    if op == "phase":
        return {"phase": dep.agent(args["agentid"]).phase}
    if op == "put_profile":
        mgr = dep.owner_of(args["mtid"])
        resp = dep.api("PUT", f"{mgr.config.api_host}/profiles/{args['mtid']}",
                       token=ops_token, body=args["profile"])
        return {"status": resp.status}
    if op == "put_policies":
        mgr = dep.owner_of(args["mtid"])
        resp = dep.api("PUT", f"{mgr.config.api_host}/policies/{args['mtid']}",
                       token=ops_token, body={"policies": args["policies"]})
        return {"status": resp.status}
    raise ScriptInvalid(f"unknown probe op {op!r}")


def _check_expect(expect: dict, outcome: dict) -> bool:
    for key, want in expect.items():
        if key.startswith("min_"):
            got = outcome.get(key[4:])
            if got is None or got < want:
                return False
        elif key.startswith("max_"):
            got = outcome.get(key[4:])
            if got is None or got > want:
                return False
        elif key == "contains":
            got = outcome.get("pending", [])
            if want not in got:
                return False
        elif outcome.get(key) != want:
            return False
    return True
