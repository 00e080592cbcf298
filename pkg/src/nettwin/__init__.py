"""Network twin workbench: constrained topologies, fluid traffic simulation,
per-edge congestion classification, and policy-based rerouting."""

from . import harness, mpnn, netsim, reroute, telemetry, topology, traffic

__all__ = ["harness", "mpnn", "netsim", "reroute", "telemetry", "topology", "traffic"]
__version__ = "0.1.0"
