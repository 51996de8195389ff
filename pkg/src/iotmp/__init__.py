"""iotmp: agent / manager / manager-of-managers middleware for managed things.

Simulated devices register with managers through a framed agent protocol;
managers store attribute data, enforce owner-defined security and
location-privacy policies, and expose a token-authenticated REST API; a
manager-of-managers routes application requests to the owning manager.
A deterministic simulation harness exercises the whole stack.
"""

__version__ = "0.1.0"
