"""Deterministic single-threaded harness: kernel, network, fixtures, scenarios."""

from iotmp.sim.kernel import SIM_EPOCH, Kernel
from iotmp.sim.network import SimHttp, SimNetwork
from iotmp.sim.trace import Trace, TraceEvent

__all__ = ["SIM_EPOCH", "Kernel", "SimHttp", "SimNetwork", "Trace", "TraceEvent"]
