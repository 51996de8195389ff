"""Canned deployments for simulations and tests: managers, a MoMs, device
profiles and fleet spawning, all on one kernel."""

from __future__ import annotations

import json
import math

from iotmp.agent import Agent, AlertRule, SimulatedThing
from iotmp.errors import ScriptInvalid, UnknownTarget
from iotmp.manager import Manager, ManagerConfig
from iotmp.moms import ManagerOfManagers, MoMsConfig
from iotmp.privacy import load_bundled_world
from iotmp.security import UNKNOWN
from iotmp.sim.kernel import Kernel
from iotmp.sim.network import SimHttp, SimNetwork

MOMS_KEY = "fleet-topology-key"
TOKEN_SECRET = "fleet-token-secret"

WORLD = load_bundled_world()
_LEAVES = WORLD.leaves()


def _thermo_sensors(index: int):
    leaf = _LEAVES[index % len(_LEAVES)]

    def temperature(t, rng):
        return round(18.0 + 4.0 * math.sin(t / 600.0) + rng.uniform(-0.5, 0.5), 3)

    def humidity(t, rng):
        return round(40.0 + 10.0 * math.cos(t / 900.0) + rng.uniform(-2, 2), 3)

    return {"Temperature": temperature, "Humidity": humidity}, leaf


def _tracker_sensors(index: int):
    def location(t, rng):
        return WORLD.location_for(rng.choice(_LEAVES))

    def speed(t, rng):
        return round(abs(rng.gauss(1.4, 0.6)), 3)

    return {"MobileLocation": location, "Speed": speed}, None


def _meter_sensors(index: int):
    def energy(t, rng):
        return round(0.25 * t / 3600.0 + rng.uniform(0, 0.01), 5)

    return {"Energy": energy}, None


PROFILES = {
    "thermo": {
        "type": "thermostat",
        "sensors": _thermo_sensors,
        "actuators": {"Setpoint": 21.0},
        "update_period": 5.0,
        "alert_rules": [AlertRule("Temperature", ">", 26.0)],
        "fixed_location": True,
    },
    "tracker": {
        "type": "asset-tracker",
        "sensors": _tracker_sensors,
        "actuators": {},
        "update_period": 7.0,
        "alert_rules": [AlertRule("Speed", ">", 2.2)],
        "fixed_location": False,
    },
    "meter": {
        "type": "energy-meter",
        "sensors": _meter_sensors,
        "actuators": {"Relay": "closed"},
        "update_period": 10.0,
        "alert_rules": [],
        "fixed_location": False,
    },
}


class Deployment:
    """A full simulated stack sharing one kernel: N managers, an optional
    MoMs, and any number of spawned agents."""

    def __init__(self, kernel: Kernel | None = None, managers: int = 1, *,
                 with_moms: bool = True, seed: int = 0, auto_approve: bool = True,
                 **manager_kw):
        self.kernel = kernel or Kernel(seed=seed)
        self.net = SimNetwork(self.kernel)
        self.http = SimHttp(self.kernel)
        self.auto_approve = auto_approve
        self.moms = None
        if with_moms:
            self.moms = ManagerOfManagers(
                MoMsConfig(key=MOMS_KEY,
                           publish_period=manager_kw.get("publish_period", 10.0)),
                self.kernel, self.http)
            self.http.register("moms", self.moms.handle)
        self.managers: list[Manager] = []
        for i in range(1, managers + 1):
            cfg = ManagerConfig(
                f"m{i}", f"sim://m{i}-agents", api_host=f"sim://m{i}",
                moms_url="sim://moms" if with_moms else None, moms_key=MOMS_KEY,
                token_secret=TOKEN_SECRET, **manager_kw)
            mgr = Manager(cfg, self.kernel, http=self.http)
            mgr.start(self.net)
            self.http.register(f"m{i}", mgr.api.handle)
            self.managers.append(mgr)
        self.agents: list[Agent] = []

    # -- fleet -----------------------------------------------------------------

    def spawn_fleet(self, n: int, profile: str = "thermo", method: str = "direct",
                    start: int = 1, update_period: float | None = None) -> list:
        """Create ``n`` agents with distinct MTIDs and start their joins."""
        if not isinstance(n, int) or n < 1:
            raise ScriptInvalid(f"fleet size must be a positive integer, got {n!r}")
        if profile not in PROFILES:
            raise ScriptInvalid(f"unknown device profile {profile!r}")
        spec = PROFILES[profile]
        spawned = []
        for j in range(n):
            index = start + j
            sensors, leaf = spec["sensors"](index)
            thing = SimulatedThing(sensors=sensors, actuators=dict(spec["actuators"]))
            descriptor = [("ID", f"mt-{index:03d}"), ("Type", spec["type"]),
                          ("SerialNumber", f"SN{index:05d}"), ("Vendor", "simco")]
            if spec["fixed_location"] and leaf:
                descriptor.append(("FixedLocation", WORLD.location_for(leaf)))
            kw = {
                "update_period": update_period or spec["update_period"],
                "alert_rules": list(spec["alert_rules"]),
                "battery": 100.0,
                "battery_drain": 0.0005,
            }
            if method == "direct":
                target = self.managers[j % len(self.managers)]
                kw["manager_address"] = target.config.agent_address
            elif method == "associate":
                kw["manager_address"] = None
                kw["discovery"] = [m.config.agent_address for m in self.managers]
            else:
                raise ScriptInvalid(f"unknown join method {method!r}")
            agent = Agent(f"ag-{index:03d}", descriptor, thing, self.kernel,
                          self.net, **kw)
            if self.auto_approve:
                for mgr in self.managers:
                    if mgr.sm.admission_state(agent.agentid) == UNKNOWN:
                        mgr.sm.admit_agent(agent.agentid)
                        mgr.sm.approve_agent(agent.agentid, "fixture")
            agent.start()
            spawned.append(agent)
        self.agents.extend(spawned)
        return spawned

    def agent(self, ident: str) -> Agent:
        for ag in self.agents:
            if ident in (ag.agentid, ag.mtid):
                return ag
        raise UnknownTarget(ident)

    def manager(self, managerid: str) -> Manager:
        for mgr in self.managers:
            if mgr.managerid == managerid:
                return mgr
        raise UnknownTarget(managerid)

    def owner_of(self, mtid: str) -> Manager:
        for mgr in self.managers:
            if mtid in mgr.store.records:
                return mgr
        raise UnknownTarget(mtid)

    # -- application plumbing ----------------------------------------------------

    def register_app(self, appid: str, role: str = "iot_app") -> str:
        """Register once, share the registration with every manager."""
        reg, secret = self.managers[0].tokens.register_app(appid, role)
        for mgr in self.managers[1:]:
            mgr.tokens.import_registration(reg)
        return secret

    def mint_token(self, appid: str, secret: str) -> str:
        return self.managers[0].tokens.mint_token(appid, secret)

    def app_token(self, appid: str, role: str = "iot_app") -> str:
        return self.mint_token(appid, self.register_app(appid, role))

    def allow(self, appid: str, mtid: str | None = None) -> None:
        """Put the app on the authorized list of one MT or of all of them."""
        for mgr in self.managers:
            mtids = [mtid] if mtid else list(mgr.store.records)
            for target in mtids:
                if target in mgr.store.records:
                    mgr.sm.edit_profile(target, "add_entity", appid, "admin",
                                        is_admin=True)

    def api(self, method: str, url: str, token: str | None = None,
            body=None, headers: dict | None = None):
        h = dict(headers or {})
        if token:
            h["authorization"] = f"Bearer {token}"
        payload = b""
        if body is not None:
            payload = json.dumps(body).encode("utf-8")
        return self.http.request(method, url, headers=h, body=payload)

    def run(self, duration: float) -> None:
        self.kernel.run_for(duration)

    def stop(self) -> None:
        for ag in self.agents:
            ag.stop()
        for mgr in self.managers:
            mgr.stop()
