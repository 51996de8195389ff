"""Manager-side behavior: registration bookkeeping, quarantine, device
round trips and topology publishing."""

import json

import pytest

from iotmp.agent import Agent, SimulatedThing
from iotmp.errors import DeviceTimeout, UnknownAttribute, UnknownMT
from iotmp.manager import Manager, ManagerConfig
from iotmp.model import ProtocolMessage, attr, body_get
from iotmp.sim import Kernel, SimHttp, SimNetwork
from iotmp.store import APPROVAL_APPROVED, APPROVAL_REVOKED


@pytest.fixture
def world():
    k = Kernel(seed=5)
    return k, SimNetwork(k), SimHttp(k)


def start_manager(k, net, http=None, managerid="m1", **kw):
    kw.setdefault("allowlist", ("ag-1", "ag-2"))
    cfg = ManagerConfig(managerid, f"sim://{managerid}-agents",
                        api_host=f"sim://{managerid}", **kw)
    mgr = Manager(cfg, k, http=http)
    mgr.start(net)
    return mgr


def start_agent(k, net, agentid="ag-1", mtid="mt-1", to="m1", **kw):
    thing = SimulatedThing(
        sensors={"Temperature": lambda t, rng: 20.0 + rng.random()},
        actuators={"Power": "off"})
    ag = Agent(agentid, [("ID", mtid), ("Type", "thermo")], thing, k, net,
               manager_address=f"sim://{to}-agents", **kw)
    ag.start()
    return ag


class _RawPeer:
    """A bare channel speaking the frame protocol, for malformed input."""

    def __init__(self, k, net, address):
        self.replies = []
        self.end = net.connect(address, label="raw")
        self.end.on_message = self.replies.append
        self.k = k

    def send(self, msg, wait=0.1):
        self.end.send(msg)
        self.k.run_for(wait)
        return self.replies[-1] if self.replies else None


class TestRegistration:
    def test_rejoin_keeps_one_record_and_history(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        ag = start_agent(k, net, update_period=1.0)
        k.run_for(3.0)
        created = mgr.store.records["mt-1"].created_at
        history = mgr.store.reading_count("mt-1")
        assert history > 0
        ag.stop()
        k.run_for(1.0)
        assert mgr.store.records["mt-1"].connection == "disconnected"
        again = start_agent(k, net)  # fresh agent process, same identity
        assert len(mgr.store.records) == 1
        assert mgr.store.records["mt-1"].created_at == created
        assert mgr.store.reading_count("mt-1") >= history
        assert mgr.store.records["mt-1"].connection == "connected"
        again.stop()

    def test_live_duplicate_mtid_is_rejected(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        start_agent(k, net, agentid="ag-1")
        raw = _RawPeer(k, net, "sim://m1-agents")
        body = (attr("ID", "mt-1"), attr("Type", "imposter"))
        reply = raw.send(ProtocolMessage("DIRECT-JOIN", 1, "ag-2", "mt-1", body))
        assert reply.kind == "JOIN-ACK"
        assert body_get(reply.body, "_status") == "rejected"
        assert body_get(reply.body, "_code") == "DuplicateMTID"
        assert mgr.store.records["mt-1"].agentid == "ag-1"

    def test_revoked_agent_join_is_rejected(self, world):
        k, net, _ = world
        mgr = start_manager(k, net, allowlist=())
        raw = _RawPeer(k, net, "sim://m1-agents")
        reply = raw.send(ProtocolMessage("DIRECT-JOIN", 1, "ag-x", "mt-x",
                                         (attr("ID", "mt-x"),)))
        assert body_get(reply.body, "_status") == "pending"
        mgr.revoke_agent("ag-x", "admin")
        raw2 = _RawPeer(k, net, "sim://m1-agents")
        reply = raw2.send(ProtocolMessage("DIRECT-JOIN", 2, "ag-x", "mt-x",
                                          (attr("ID", "mt-x"),)))
        assert body_get(reply.body, "_status") == "rejected"
        assert body_get(reply.body, "_code") == "UnapprovedAgent"

    def test_same_agent_takes_over_its_ghost_channel(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        ghost = _RawPeer(k, net, "sim://m1-agents")
        ghost.send(ProtocolMessage("DIRECT-JOIN", 1, "ag-1", "mt-1", (attr("ID", "mt-1"),)))
        fresh = _RawPeer(k, net, "sim://m1-agents")
        reply = fresh.send(ProtocolMessage("DIRECT-JOIN", 1, "ag-1", "mt-1",
                                           (attr("ID", "mt-1"),)))
        assert body_get(reply.body, "_status") == "registered"
        assert len(mgr.store.records) == 1
        # the new channel owns the MT now
        reply = fresh.send(ProtocolMessage("UPDATE", 2, "ag-1", "mt-1",
                                           (attr("Temperature", 1.0, ts=0),)))
        assert reply.kind == "ACK"

    def test_descriptor_without_id_rejected(self, world):
        k, net, _ = world
        start_manager(k, net)
        raw = _RawPeer(k, net, "sim://m1-agents")
        reply = raw.send(ProtocolMessage("DIRECT-JOIN", 1, "ag-1", "mt-9",
                                         (attr("Type", "thermo"),)))
        assert body_get(reply.body, "_status") == "rejected"
        assert body_get(reply.body, "_code") == "MalformedDescriptor"

    def test_reconnect_unknown_registration(self, world):
        k, net, _ = world
        start_manager(k, net)
        raw = _RawPeer(k, net, "sim://m1-agents")
        reply = raw.send(ProtocolMessage("RECONNECT", 1, "ag-1", "mt-ghost"))
        assert reply.kind == "ERROR"
        assert body_get(reply.body, "_code") == "UnknownRegistration"

    def test_reconnect_wrong_agent_refused(self, world):
        k, net, _ = world
        start_manager(k, net)
        start_agent(k, net, agentid="ag-1", mtid="mt-1")
        raw = _RawPeer(k, net, "sim://m1-agents")
        reply = raw.send(ProtocolMessage("RECONNECT", 1, "ag-other", "mt-1"))
        assert reply.kind == "ERROR"
        assert body_get(reply.body, "_code") == "UnknownRegistration"


class TestQuarantine:
    def test_pending_frames_store_nothing(self, world):
        k, net, _ = world
        mgr = start_manager(k, net, allowlist=())
        start_agent(k, net, update_period=1.0)
        k.run_for(10.0)
        assert mgr.store.reading_count() == 0
        assert mgr.store.alerts_for() == []
        assert mgr.store.counters["mt-1"]["quarantined"] >= 9

    def test_approval_opens_the_gate(self, world):
        k, net, _ = world
        mgr = start_manager(k, net, allowlist=())
        start_agent(k, net, update_period=1.0)
        k.run_for(3.0)
        mgr.approve_agent("ag-1", "ops")
        assert mgr.store.records["mt-1"].approval == APPROVAL_APPROVED
        k.run_for(3.0)
        assert mgr.store.reading_count("mt-1") > 0

    def test_revocation_closes_it_again(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        start_agent(k, net, update_period=1.0)
        k.run_for(3.0)
        stored = mgr.store.reading_count("mt-1")
        assert stored > 0
        mgr.revoke_agent("ag-1", "ops")
        assert mgr.store.records["mt-1"].approval == APPROVAL_REVOKED
        k.run_for(5.0)
        assert mgr.store.reading_count("mt-1") == stored


class TestFrameDiscipline:
    def test_seq_regression_is_refused(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        raw = _RawPeer(k, net, "sim://m1-agents")
        raw.send(ProtocolMessage("DIRECT-JOIN", 1, "ag-1", "mt-1", (attr("ID", "mt-1"),)))
        reply = raw.send(ProtocolMessage("UPDATE", 5, "ag-1", "mt-1",
                                         (attr("Temperature", 1.0, ts=0),)))
        assert reply.kind == "ACK"
        reply = raw.send(ProtocolMessage("UPDATE", 5, "ag-1", "mt-1",
                                         (attr("Temperature", 2.0, ts=0),)))
        assert reply.kind == "ERROR"
        assert body_get(reply.body, "_code") == "MalformedFrame"
        assert mgr.store.reading_count("mt-1") == 1

    def test_update_for_unknown_mt(self, world):
        k, net, _ = world
        start_manager(k, net)
        raw = _RawPeer(k, net, "sim://m1-agents")
        reply = raw.send(ProtocolMessage("UPDATE", 1, "ag-1", "mt-nope",
                                         (attr("Temperature", 1.0, ts=0),)))
        assert reply.kind == "ERROR"
        assert body_get(reply.body, "_code") == "UnknownMT"

    def test_malformed_value_stores_nothing(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        raw = _RawPeer(k, net, "sim://m1-agents")
        raw.send(ProtocolMessage("DIRECT-JOIN", 1, "ag-1", "mt-1", (attr("ID", "mt-1"),)))
        bad = (attr("Temperature", 1.0, ts=0), attr("Humidity", float("nan"), ts=0))
        reply = raw.send(ProtocolMessage("UPDATE", 2, "ag-1", "mt-1", bad))
        assert reply.kind == "ERROR"
        assert mgr.store.reading_count("mt-1") == 0  # all-or-nothing


class TestDeviceRoundTrips:
    def test_get_live_offline_times_out(self, world):
        k, net, _ = world
        mgr = start_manager(k, net, device_timeout=2.0)
        ag = start_agent(k, net)
        ag.stop()
        k.run_for(1.0)
        t0 = k.now()
        with pytest.raises(DeviceTimeout):
            mgr.get_live("mt-1", "Temperature")
        assert k.now() - t0 >= 2.0  # waits the timeout out, no early guess

    def test_get_live_unknown_mt(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        with pytest.raises(UnknownMT):
            mgr.get_live("mt-zzz", "Temperature")

    def test_get_live_appends_reading(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        start_agent(k, net, update_period=1000.0)
        before = mgr.store.reading_count("mt-1")
        reading = mgr.get_live("mt-1", "Temperature")
        assert mgr.store.reading_count("mt-1") == before + 1
        assert mgr.store.latest("mt-1", "Temperature").value == reading.value

    def test_mgmt_status_down_uses_cached_battery(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        ag = start_agent(k, net, battery=64.0)
        ag.stop()
        k.run_for(1.0)
        status = mgr.mgmt_status("mt-1")
        assert status.link == "down"
        assert status.last_rtt is None
        assert status.message_counters["DIRECT-JOIN"] == 1


class TestQueries:
    def test_query_window_matches_oracle(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        start_agent(k, net, update_period=2.0)
        k.run_for(30.0)
        series = mgr.store.series("mt-1", "Temperature")
        lo = series[3].ts
        hi = series[10].ts
        kind, got = mgr.query_mt("mt-1", "Temperature", since=lo, until=hi)
        assert kind == "window"
        expect = [r for r in series if lo <= r.ts <= hi]
        assert got == expect

    def test_query_falls_back_to_management_attribute(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        start_agent(k, net)
        kind, value = mgr.query_mt("mt-1", "Type")
        assert (kind, value) == ("management", "thermo")
        with pytest.raises(UnknownAttribute):
            mgr.query_mt("mt-1", "Nope")


class TestTopologyPublish:
    def test_payload_shape(self, world):
        k, net, _ = world
        mgr = start_manager(k, net)
        start_agent(k, net, agentid="ag-2", mtid="mt-2")
        start_agent(k, net, agentid="ag-1", mtid="mt-1")
        payload = mgr.topology_payload()
        assert set(payload) == {"managerid", "address", "mtids"}
        assert payload["mtids"] == ["mt-1", "mt-2"]

    def test_join_burst_publishes_once(self, world):
        k, net, http = world
        hits = []

        def sink(req):
            hits.append(json.loads(req.body))
            from iotmp.api import json_response
            return json_response(200, {})

        http.register("moms", sink)
        mgr = start_manager(k, net, http=http, moms_url="sim://moms",
                            publish_period=100.0)
        for i in (1, 2):
            start_agent(k, net, agentid=f"ag-{i}", mtid=f"mt-{i}")
        k.run_for(1.0)
        assert len(hits) == 1  # debounced
        assert hits[0]["mtids"] == ["mt-1", "mt-2"]

    def test_periodic_republish_and_outage_recovery(self, world):
        k, net, http = world
        hits = []

        def sink(req):
            hits.append(req)
            from iotmp.api import json_response
            return json_response(200, {})

        http.register("moms", sink)
        mgr = start_manager(k, net, http=http, moms_url="sim://moms",
                            publish_period=5.0)
        k.run_for(11.0)
        baseline = len(hits)
        assert baseline >= 2
        http.take_offline("moms")
        k.run_for(10.0)
        assert len(hits) == baseline
        failures = k.trace_log.of_kind("publish_failed")
        assert failures  # the attempt was made and noted
        http.bring_online("moms")
        k.run_for(10.0)
        assert len(hits) > baseline


class TestDeterminism:
    def test_same_seed_same_trace(self, world):
        def run(seed):
            k = Kernel(seed=seed)
            net = SimNetwork(k)
            mgr = start_manager(k, net)
            start_agent(k, net, update_period=1.5)
            k.run_for(20.0)
            mgr.get_live("mt-1", "Temperature")
            return k.trace_digest()

        assert run(3) == run(3)
        assert run(3) != run(4)
