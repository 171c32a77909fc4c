"""NetInf mobile node protocols on a deterministic discrete-event fabric."""

from netinf_mn.ids import ArId, GlobalLocator, IdRegistry, LocalAddress, NodeId, mint_node_id

__all__ = [
    "ArId",
    "GlobalLocator",
    "IdRegistry",
    "LocalAddress",
    "NodeId",
    "mint_node_id",
]

__version__ = "0.1.0"
