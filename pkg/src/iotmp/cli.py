"""Operator command line.

    iotmp run manager|moms|agent|fleet --config FILE
    iotmp app register|token ...
    iotmp mt get|post|status ...
    iotmp admin approve-agent|revoke-agent|list-pending|edit-profile|edit-policy ...
    iotmp sim run SCRIPT [--trace FILE] [--report DIR]
    iotmp report --trace FILE --outdir DIR

Networked commands take --manager/--moms base URLs and --token FILE; the
same settings can come from IOTMP_MANAGER, IOTMP_MOMS, IOTMP_TOKEN_FILE
(or IOTMP_TOKEN with the literal token). Exit status: 0 for a 2xx
response, 2 for 4xx, 3 for 5xx, 1 for local failures such as bad config,
unreachable endpoints or an invalid scenario script.

App secrets are printed exactly once, by ``app register``; every other
command reads credentials from files or the environment and never echoes
them.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import tempfile
import threading

from iotmp.errors import ConfigInvalid, IotmpError
from iotmp.sim.trace import Trace

ENV_PREFIX = "IOTMP_"


# -- plumbing -------------------------------------------------------------------


def _env(name: str) -> str | None:
    return os.environ.get(ENV_PREFIX + name)


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigInvalid("config must be a JSON object")
    return cfg


def _need(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigInvalid(f"config is missing {key!r}")
    return cfg[key]


def _base_url(args, *, manager_only: bool = False) -> str:
    manager = getattr(args, "manager", None) or _env("MANAGER")
    moms = getattr(args, "moms", None) or _env("MOMS")
    if manager_only:
        if not manager:
            raise ConfigInvalid("this command needs --manager (or IOTMP_MANAGER)")
        return manager.rstrip("/")
    url = moms or manager
    if not url:
        raise ConfigInvalid("pass --manager or --moms (or set IOTMP_MANAGER/IOTMP_MOMS)")
    return url.rstrip("/")


def _token(args) -> str:
    path = getattr(args, "token", None) or _env("TOKEN_FILE")
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                return fh.read().strip()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read token file: {exc}") from None
    raw = _env("TOKEN")
    if raw:
        return raw.strip()
    raise ConfigInvalid("no token: pass --token FILE or set IOTMP_TOKEN_FILE")


def _client():
    from iotmp.httpd import LiveHttp

    return LiveHttp(timeout=15.0)


def _call(args, method: str, path: str, body=None, token: str | None = None,
          headers: dict | None = None, base: str | None = None):
    url = (base or _base_url(args)) + path
    hdrs = dict(headers or {})
    payload = b""
    if body is not None:
        payload = json.dumps(body, sort_keys=True).encode("utf-8")
        hdrs["content-type"] = "application/json"
    if token is not None:
        hdrs["authorization"] = f"Bearer {token}"
    return _client().request(method, url, headers=hdrs, body=payload)


def _emit(args, resp) -> int:
    try:
        body = resp.json()
    except Exception:
        body = resp.body.decode("utf-8", "replace")
    if getattr(args, "json", False):
        print(json.dumps(body, sort_keys=True, separators=(",", ":")))
    else:
        print(json.dumps(body, indent=2, sort_keys=True))
    return _exit_code(resp.status)


def _exit_code(status: int) -> int:
    if 200 <= status < 300:
        return 0
    if 400 <= status < 500:
        return 2
    return 3


def _wait_for_signal() -> None:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()


def _json_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


# -- run: live nodes --------------------------------------------------------------


def _tls_material(cfg: dict):
    """Resolve (tls, certfile, keyfile), generating a throwaway pair if
    TLS is on but no certificate was configured."""
    from iotmp.httpd import make_self_signed

    tls = bool(cfg.get("tls"))
    certfile, keyfile = cfg.get("certfile"), cfg.get("keyfile")
    if tls and not certfile:
        directory = tempfile.mkdtemp(prefix="iotmp-tls-")
        certfile, keyfile = make_self_signed(cfg.get("api_bind", "127.0.0.1"),
                                             directory)
    return tls, certfile, keyfile


def cmd_run_manager(args) -> int:
    from iotmp.httpd import ApiHttpServer, LiveHttp, LiveNetwork
    from iotmp.manager import Manager, ManagerConfig
    from iotmp.runtime import LiveRuntime

    cfg = _load_config(args.config)
    managerid = _need(cfg, "managerid")
    agent_bind = _need(cfg, "agent_bind")
    tls, certfile, keyfile = _tls_material(cfg)

    mconfig = ManagerConfig(
        managerid, agent_bind,
        moms_url=cfg.get("moms_url"), moms_key=cfg.get("moms_key", ""),
        token_secret=cfg.get("token_secret", "iotmp-dev-secret"),
        token_ttl=float(cfg.get("token_ttl", 3600.0)),
        allowlist=cfg.get("allowlist", ()),
        device_timeout=float(cfg.get("device_timeout", 5.0)),
        publish_period=float(cfg.get("publish_period", 10.0)),
        storage_path=cfg.get("storage_path"),
        allow_time_probe=bool(cfg.get("allow_time_probe", False)),
        register_key=cfg.get("register_key"),
    )
    rt = LiveRuntime()
    net = LiveNetwork()
    mgr = Manager(mconfig, rt, http=LiveHttp())
    server = ApiHttpServer(mgr.api.handle, cfg.get("api_bind", "127.0.0.1"),
                           int(cfg.get("api_port", 0)), tls=tls,
                           certfile=certfile, keyfile=keyfile,
                           static_dir=cfg.get("console_dir"))
    mconfig.api_host = cfg.get("api_url") or server.url
    try:
        mgr.start(net)
    except IotmpError:
        server.stop()
        raise
    server.start()
    print(f"ready kind=manager managerid={managerid} api={mconfig.api_host} "
          f"agents={agent_bind}", flush=True)
    _wait_for_signal()
    mgr.stop()
    server.stop()
    net.unregister_listener(agent_bind)
    return 0


def cmd_run_moms(args) -> int:
    from iotmp.httpd import ApiHttpServer, LiveHttp
    from iotmp.moms import ManagerOfManagers, MoMsConfig
    from iotmp.runtime import LiveRuntime

    cfg = _load_config(args.config)
    key = _need(cfg, "key")
    momsid = cfg.get("momsid", "moms")
    tls, certfile, keyfile = _tls_material(cfg)
    moms = ManagerOfManagers(
        MoMsConfig(momsid, key=key,
                   publish_period=float(cfg.get("publish_period", 10.0))),
        LiveRuntime(), LiveHttp())
    server = ApiHttpServer(moms.handle, cfg.get("api_bind", "127.0.0.1"),
                           int(cfg.get("api_port", 0)), tls=tls,
                           certfile=certfile, keyfile=keyfile)
    server.start()
    print(f"ready kind=moms momsid={momsid} api={server.url}", flush=True)
    _wait_for_signal()
    server.stop()
    return 0


def _build_agent(cfg: dict, rt, net, index: int = 0):
    from iotmp.agent import Agent, SimulatedThing
    from iotmp.sim.fixtures import PROFILES, WORLD

    agentid = _need(cfg, "agentid")
    mtid = _need(cfg, "mtid")
    name = cfg.get("profile", "thermo")
    profile = PROFILES.get(name)
    if profile is None:
        raise ConfigInvalid(f"unknown device profile {name!r}")
    sensors, leaf = profile["sensors"](index)
    descriptor = [
        ("ID", mtid),
        ("Type", cfg.get("type", profile["type"])),
        ("SerialNumber", cfg.get("serial", f"SN-{mtid}")),
        ("Vendor", cfg.get("vendor", "iotmp")),
    ]
    zone = cfg.get("zone") or (leaf if profile["fixed_location"] else None)
    if zone:
        descriptor.append(("FixedLocation", WORLD.location_for(zone)))
    thing = SimulatedThing(sensors, dict(profile["actuators"]))
    return Agent(
        agentid, descriptor, thing, rt, net,
        manager_address=cfg.get("manager"),
        discovery=cfg.get("discovery", ()),
        update_period=float(cfg.get("update_period", profile["update_period"])),
        alert_rules=profile["alert_rules"],
        battery_drain=float(cfg.get("battery_drain", 0.0)),
    )


def cmd_run_agent(args) -> int:
    from iotmp.httpd import LiveNetwork
    from iotmp.runtime import LiveRuntime

    cfg = _load_config(args.config)
    agent = _build_agent(cfg, LiveRuntime(), LiveNetwork(),
                         index=int(cfg.get("index", 0)))
    agent.start()
    print(f"ready kind=agent agentid={agent.agentid} mtid={agent.mtid} "
          f"phase={agent.phase}", flush=True)
    _wait_for_signal()
    agent.stop()
    return 0


def cmd_run_fleet(args) -> int:
    from iotmp.httpd import LiveNetwork
    from iotmp.runtime import LiveRuntime

    cfg = _load_config(args.config)
    n = _need(cfg, "n")
    if not isinstance(n, int) or n < 1:
        raise ConfigInvalid(f"fleet size must be a positive integer, got {n!r}")
    prefix = cfg.get("prefix", "lv")
    start = int(cfg.get("start", 1))
    rt = LiveRuntime()
    net = LiveNetwork()
    agents = []
    for i in range(start, start + n):
        sub = dict(cfg)
        sub["agentid"] = f"{prefix}-a{i:03d}"
        sub["mtid"] = f"{prefix}-mt{i:03d}"
        agents.append(_build_agent(sub, rt, net, index=i))
    for agent in agents:
        agent.start()
    print(f"ready kind=fleet n={n} prefix={prefix}", flush=True)
    _wait_for_signal()
    for agent in agents:
        agent.stop()
    return 0


# -- app: credentials --------------------------------------------------------------


def cmd_app_register(args) -> int:
    headers = {}
    register_key = args.register_key or _env("REGISTER_KEY")
    if register_key:
        headers["x-register-key"] = register_key
    resp = _call(args, "POST", "/apps",
                 body={"appid": args.appid, "role": args.role},
                 headers=headers, base=_base_url(args, manager_only=True))
    if resp.status == 201 and not getattr(args, "json", False):
        print("store this secret now; it is not shown again", file=sys.stderr)
    return _emit(args, resp)


def cmd_app_token(args) -> int:
    if args.secret_file:
        try:
            with open(args.secret_file, encoding="utf-8") as fh:
                secret = fh.read().strip()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read secret file: {exc}") from None
    else:
        secret = _env("APP_SECRET")
    if not secret:
        raise ConfigInvalid("no secret: pass --secret-file or set IOTMP_APP_SECRET")
    resp = _call(args, "POST", "/tokens",
                 body={"appid": args.appid, "secret": secret},
                 base=_base_url(args, manager_only=True))
    if resp.status != 200:
        return _emit(args, resp)
    body = resp.json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(body["token"])
        os.chmod(args.out, 0o600)
        print(f"token written to {args.out} (role={body['role']}, exp={body['exp']})")
    else:
        print(body["token"])
    return 0


# -- mt: data access ----------------------------------------------------------------


def cmd_mt_get(args) -> int:
    token = _token(args)
    if not args.attribute:
        return _emit(args, _call(args, "GET", f"/mt/{args.mtid}", token=token))
    params = []
    if args.since is not None:
        params.append(f"since={args.since}")
    if args.until is not None:
        params.append(f"until={args.until}")
    if args.at is not None:
        params.append(f"at={args.at}")
    if args.live:
        params.append("live=1")
    query = "?" + "&".join(params) if params else ""
    resp = _call(args, "GET", f"/mt/{args.mtid}/{args.attribute}{query}", token=token)
    return _emit(args, resp)


def cmd_mt_post(args) -> int:
    resp = _call(args, "POST", f"/mt/{args.mtid}/data",
                 body={"name": args.name, "value": _json_value(args.value)},
                 token=_token(args))
    return _emit(args, resp)


def cmd_mt_status(args) -> int:
    resp = _call(args, "GET", f"/mt/{args.mtid}/status", token=_token(args))
    return _emit(args, resp)


# -- admin ---------------------------------------------------------------------------


def cmd_admin_approve(args) -> int:
    resp = _call(args, "POST", f"/agents/{args.agentid}/approve",
                 token=_token(args), base=_base_url(args, manager_only=True))
    return _emit(args, resp)


def cmd_admin_revoke(args) -> int:
    resp = _call(args, "POST", f"/agents/{args.agentid}/revoke",
                 token=_token(args), base=_base_url(args, manager_only=True))
    return _emit(args, resp)


def cmd_admin_pending(args) -> int:
    resp = _call(args, "GET", "/agents/pending", token=_token(args),
                 base=_base_url(args, manager_only=True))
    return _emit(args, resp)


def _load_json_file(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path} is not JSON: {exc}") from None


def cmd_admin_edit_profile(args) -> int:
    profile = _load_json_file(args.file)
    resp = _call(args, "PUT", f"/profiles/{args.mtid}", body=profile,
                 token=_token(args))
    return _emit(args, resp)


def cmd_admin_edit_policy(args) -> int:
    policies = _load_json_file(args.file)
    if isinstance(policies, list):
        policies = {"policies": policies}
    resp = _call(args, "PUT", f"/policies/{args.mtid}", body=policies,
                 token=_token(args))
    return _emit(args, resp)


# -- sim and report -------------------------------------------------------------------


def cmd_sim_run(args) -> int:
    from iotmp.sim.scenario import ScenarioScript, run_scenario

    script = ScenarioScript.load(args.script)
    result = run_scenario(script)
    for probe in result.report:
        flag = "PASS" if probe["ok"] else "FAIL"
        print(f"{flag} t={probe['time']:g} {probe['op']} "
              f"{json.dumps(probe['args'], sort_keys=True)}")
    print(f"events={len(result.trace)} digest={result.digest()}")
    if args.trace:
        result.trace.dump(args.trace)
        print(f"trace written to {args.trace}")
    if args.report:
        from iotmp.report import write_report

        for path in write_report(result.trace, args.report):
            print(f"wrote {path}")
    return 0 if result.passed else 2


def cmd_report(args) -> int:
    from iotmp.report import write_report

    trace = Trace.load(args.trace)
    for path in write_report(trace, args.outdir):
        print(f"wrote {path}")
    return 0


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    net = argparse.ArgumentParser(add_help=False)
    net.add_argument("--manager", help="manager base URL (IOTMP_MANAGER)")
    net.add_argument("--moms", help="MoMs base URL, preferred when set (IOTMP_MOMS)")
    net.add_argument("--token", metavar="FILE",
                     help="file holding a bearer token (IOTMP_TOKEN_FILE)")
    net.add_argument("--json", action="store_true",
                     help="compact single-line JSON output")

    p = argparse.ArgumentParser(prog="iotmp", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a live node until SIGINT/SIGTERM")
    runsub = runp.add_subparsers(dest="node", required=True)
    for node, fn in (("manager", cmd_run_manager), ("moms", cmd_run_moms),
                     ("agent", cmd_run_agent), ("fleet", cmd_run_fleet)):
        np = runsub.add_parser(node)
        np.add_argument("--config", required=True, metavar="FILE")
        np.set_defaults(fn=fn)

    appp = sub.add_parser("app", help="application credentials")
    appsub = appp.add_subparsers(dest="action", required=True)
    reg = appsub.add_parser("register", parents=[net])
    reg.add_argument("appid")
    reg.add_argument("--role", default="iot_app",
                     choices=("iot_app", "management_app"))
    reg.add_argument("--register-key", help="operator key (IOTMP_REGISTER_KEY)")
    reg.set_defaults(fn=cmd_app_register)
    tok = appsub.add_parser("token", parents=[net])
    tok.add_argument("appid")
    tok.add_argument("--secret-file", metavar="FILE",
                     help="file holding the app secret (IOTMP_APP_SECRET)")
    tok.add_argument("--out", metavar="FILE", help="write the token here")
    tok.set_defaults(fn=cmd_app_token)

    mtp = sub.add_parser("mt", help="managed thing data")
    mtsub = mtp.add_subparsers(dest="action", required=True)
    get = mtsub.add_parser("get", parents=[net])
    get.add_argument("mtid")
    get.add_argument("attribute", nargs="?")
    get.add_argument("--since", type=float)
    get.add_argument("--until", type=float)
    get.add_argument("--at", type=float)
    get.add_argument("--live", action="store_true",
                     help="read from the device, not the store")
    get.set_defaults(fn=cmd_mt_get)
    post = mtsub.add_parser("post", parents=[net])
    post.add_argument("mtid")
    post.add_argument("--name", required=True)
    post.add_argument("--value", required=True)
    post.set_defaults(fn=cmd_mt_post)
    stat = mtsub.add_parser("status", parents=[net])
    stat.add_argument("mtid")
    stat.set_defaults(fn=cmd_mt_status)

    adm = sub.add_parser("admin", help="fleet administration")
    admsub = adm.add_subparsers(dest="action", required=True)
    for action, fn, arg in (("approve-agent", cmd_admin_approve, "agentid"),
                            ("revoke-agent", cmd_admin_revoke, "agentid"),
                            ("list-pending", cmd_admin_pending, None)):
        ap = admsub.add_parser(action, parents=[net])
        if arg:
            ap.add_argument(arg)
        ap.set_defaults(fn=fn)
    for action, fn in (("edit-profile", cmd_admin_edit_profile),
                       ("edit-policy", cmd_admin_edit_policy)):
        ap = admsub.add_parser(action, parents=[net])
        ap.add_argument("mtid")
        ap.add_argument("--file", required=True, metavar="FILE")
        ap.set_defaults(fn=fn)

    simp = sub.add_parser("sim", help="scripted simulations")
    simsub = simp.add_subparsers(dest="action", required=True)
    srun = simsub.add_parser("run")
    srun.add_argument("script", metavar="SCRIPT.json")
    srun.add_argument("--trace", metavar="FILE", help="dump the trace here")
    srun.add_argument("--report", metavar="DIR", help="render report artifacts")
    srun.set_defaults(fn=cmd_sim_run)

    rep = sub.add_parser("report", help="render a dumped trace")
    rep.add_argument("--trace", required=True, metavar="FILE")
    rep.add_argument("--outdir", required=True, metavar="DIR")
    rep.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except IotmpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
