import random

import pytest

from iotmp.errors import UnknownMT
from iotmp.model import Reading, SemanticLocation
from iotmp.privacy import DisclosurePolicy
from iotmp.security import AgentAdmission, SecurityProfile
from iotmp.store import CONNECTED, ManagedThingRecord, ManagerStore
from iotmp.tokens import AppRegistration


def rec(mtid="mt1", agentid="ag1", **kw):
    return ManagedThingRecord(mtid=mtid, agentid=agentid, **kw)


class TestRecords:
    def test_crud(self):
        store = ManagerStore()
        store.put_record(rec())
        assert store.record("mt1").agentid == "ag1"
        store.update_record("mt1", connection=CONNECTED, last_seen=5.0)
        assert store.record("mt1").connection == CONNECTED
        store.delete_record("mt1")
        with pytest.raises(UnknownMT):
            store.record("mt1")

    def test_unknown(self):
        store = ManagerStore()
        with pytest.raises(UnknownMT):
            store.record("nope")
        with pytest.raises(UnknownMT):
            store.update_record("nope", last_seen=1.0)
        with pytest.raises(UnknownMT):
            store.delete_record("nope")

    def test_delete_cascades(self):
        store = ManagerStore()
        store.put_record(rec())
        store.append_reading("mt1", Reading("Temperature", 20.0, 1.0))
        store.profiles["mt1"] = SecurityProfile("mt1")
        store.policies["mt1"] = [DisclosurePolicy(1, "mt1", "*")]
        store.delete_record("mt1")
        assert "mt1" not in store.profiles
        assert "mt1" not in store.policies
        assert store.reading_count() == 0


class TestReadings:
    def test_series_stays_time_ordered(self):
        store = ManagerStore()
        store.put_record(rec())
        rng = random.Random(77)
        stamps = [float(t) for t in range(50)]
        rng.shuffle(stamps)
        for t in stamps:
            store.append_reading("mt1", Reading("Temperature", t, t))
        got = [r.ts for r in store.series("mt1", "Temperature")]
        assert got == sorted(got)
        assert store.latest("mt1", "Temperature").ts == 49.0

    def test_query_window_inclusive(self):
        store = ManagerStore()
        store.put_record(rec())
        for t in range(10):
            store.append_reading("mt1", Reading("Temperature", float(t), float(t)))
        got = store.query_window("mt1", "Temperature", since=3, until=6)
        assert [r.ts for r in got] == [3.0, 4.0, 5.0, 6.0]

    def test_delete_window(self):
        store = ManagerStore()
        store.put_record(rec())
        for t in range(10):
            store.append_reading("mt1", Reading("Temperature", float(t), float(t)))
        removed = store.delete_readings("mt1", "Temperature", since=2, until=4)
        assert removed == 3
        assert [r.ts for r in store.series("mt1", "Temperature")] == [0.0, 1.0] + [float(t) for t in range(5, 10)]

    def test_names_and_counts(self):
        store = ManagerStore()
        store.put_record(rec())
        store.append_reading("mt1", Reading("Temperature", 1.0, 1.0))
        store.append_reading("mt1", Reading("Motion", True, 2.0))
        assert store.reading_names("mt1") == ["Motion", "Temperature"]
        assert store.reading_count("mt1") == 2


class TestAlerts:
    def test_duplicate_suppressed(self):
        store = ManagerStore()
        entries = [{"name": "FireDetection", "value": True, "ts": 9.0}]
        assert store.add_alert("mt1", 4, entries, 10.0)
        assert not store.add_alert("mt1", 4, entries, 11.0)
        assert store.add_alert("mt1", 5, entries, 12.0)
        assert store.add_alert("mt2", 4, entries, 12.0)
        assert len(store.alerts_for("mt1")) == 2
        assert len(store.alerts_for()) == 3


class TestPersistence:
    def test_full_roundtrip(self, tmp_path, clock):
        path = str(tmp_path / "state.json")
        store = ManagerStore(path)
        loc = SemanticLocation(("w", "w-1"), 1.0, 2.0)
        store.put_record(rec(attributes={"Name": "probe", "FixedLocation": loc}, loc=loc))
        store.append_reading("mt1", Reading("Temperature", 21.5, 3.0, src="ag1"))
        store.add_alert("mt1", 1, [{"name": "Motion", "value": True, "ts": 2.0}], 2.5)
        store.admissions["ag1"] = AgentAdmission("ag1", "approved", "admin", 1.0)
        store.profiles["mt1"] = SecurityProfile("mt1", frozenset({"app1"}), True, "admin")
        store.policies["mt1"] = [DisclosurePolicy(1, "mt1", "*", action="disclose", level=1)]
        store.apps["app1"] = AppRegistration("app1", "ab" * 32, "iot_app", 1.0)
        store.bump_counter("mt1", "UPDATE")
        store.save()

        again = ManagerStore(path)
        assert again.record("mt1").attributes["FixedLocation"] == loc
        assert again.record("mt1").loc == loc
        assert again.series("mt1", "Temperature") == store.series("mt1", "Temperature")
        assert not again.add_alert("mt1", 1, [], 9.0)  # dedupe key survives reload
        assert again.admissions["ag1"].state == "approved"
        assert again.profiles["mt1"].authorized_entities == frozenset({"app1"})
        assert again.policies["mt1"][0].level == 1
        assert again.apps["app1"].role == "iot_app"
        assert again.counters["mt1"]["UPDATE"] == 1
