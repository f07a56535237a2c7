"""Microservices infrastructure kit over a deterministic simulated network.

The kit provides the transport (:mod:`ssaas_sim.simwire`), the shared
service building blocks (:mod:`ssaas_sim.chassis`), the infrastructure
services (:mod:`ssaas_sim.registry`, :mod:`ssaas_sim.confsvc`,
:mod:`ssaas_sim.gateway`), the reference application domain
(:mod:`ssaas_sim.ssaas`), and the staged migration topologies with their
trace tooling (:mod:`ssaas_sim.migration`).
"""

__version__ = "0.1.0"
