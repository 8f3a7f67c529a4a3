"""Physical infrastructure model and the logical-link catalog.

The physical network is a directed graph whose nodes are either VMs or
switches.  VMs belong to datacenters; every datacenter has a gateway node
through which its inter-datacenter traffic flows (in topologies where VMs
are wired directly, a VM is its own gateway).  Links inside a datacenter
are ideal (no capacity limit, zero delay and cost) and are therefore never
materialized; only inter-node links carry delay, cost and bandwidth.

A logical link is a VM-to-VM path of physical links.  Paths between VMs in
distinct datacenters are instantiated from a per-datacenter-pair catalog of
k minimum-delay loop-free gateway paths, which keeps enumeration tractable
on large topologies.  VM pairs inside one datacenter get a single ideal
logical link.  A dummy VM, connected to every real VM by ideal dummy links,
models traffic ingress and egress.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

DUMMY_VM = -1

#: float comparisons for path-delay ties
_TIE_EPS = 1e-12


class TopologyError(ValueError):
    """Raised for invalid network descriptions."""


@dataclass(frozen=True)
class ComputeNode:
    """A VM: the only resource that can host a VNF instance.

    capacity is in computation units/ms, cpu_cost in eur per
    (computation unit/ms) per step, idle_cost in eur per step.
    """

    id: int
    name: str
    datacenter: int
    capacity: float
    cpu_cost: float
    idle_cost: float
    setup_steps: int = 1


@dataclass(frozen=True)
class Datacenter:
    id: int
    name: str
    capacity: float           # computation units/ms, aggregate
    gateway: int              # node id traffic enters/leaves through
    members: tuple[int, ...]  # VM node ids


@dataclass(frozen=True)
class PhysicalLink:
    """Directed inter-node link.  bandwidth in packets/ms (inf = unlimited),
    delay in ms, tx_cost in eur per (packet/ms of load) per step."""

    id: int
    src: int
    dst: int
    bandwidth: float
    delay: float
    tx_cost: float
    intra_dc: bool = False


@dataclass(frozen=True)
class LogicalLink:
    """A VM-to-VM walk of physical links.

    key is (src_vm, dst_vm, path_index) and identifies the link in routing
    records; hops are physical link ids.  Dummy links attach the dummy VM.
    """

    key: tuple[int, int, int]
    src_vm: int
    dst_vm: int
    hops: tuple[int, ...]
    delay: float
    tx_cost: float
    bandwidth: float
    is_dummy: bool = False


@dataclass(frozen=True)
class GatewayPath:
    hops: tuple[int, ...]
    delay: float
    tx_cost: float
    bandwidth: float


# ---------------------------------------------------------------------------
# Input description (already in internal units; scenario.py converts tables)

@dataclass
class VmSpec:
    name: str
    datacenter: str
    capacity: float
    cpu_cost: float
    idle_cost: float


@dataclass
class LinkSpec:
    src: str
    dst: str
    delay: float
    tx_cost: float = 0.0
    bandwidth: float = math.inf
    intra_dc: bool = False


@dataclass
class DatacenterSpec:
    name: str
    gateway: str | None = None        # defaults to the single member VM
    capacity: float | None = None     # defaults to the sum of member VMs


@dataclass
class NetworkDescription:
    vms: list[VmSpec] = field(default_factory=list)
    switches: list[str] = field(default_factory=list)
    datacenters: list[DatacenterSpec] = field(default_factory=list)
    links: list[LinkSpec] = field(default_factory=list)
    setup_steps: int = 1


class LogicalLinkCatalog:
    """Lazy per-VM-pair view over the per-datacenter-pair path catalog."""

    def __init__(self, net: "PhysicalNetwork", k: int,
                 dc_paths: dict[tuple[int, int], tuple[GatewayPath, ...]]):
        self._net = net
        self.k = k
        self.dc_paths = dc_paths
        self._tables: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    def tables(self):
        """Per-datacenter-pair path attributes as dense arrays
        (delay, tx_cost, bandwidth), shape (D, D, k); missing paths hold
        inf delay.  The diagonal is the ideal same-datacenter link."""
        if self._tables is None:
            n_dc = len(self._net.datacenters)
            delay = np.full((n_dc, n_dc, self.k), math.inf)
            cost = np.zeros((n_dc, n_dc, self.k))
            bw = np.zeros((n_dc, n_dc, self.k))
            for d in range(n_dc):
                delay[d, d, 0] = 0.0
                bw[d, d, 0] = math.inf
            for (d1, d2), paths in self.dc_paths.items():
                for j, p in enumerate(paths):
                    delay[d1, d2, j] = p.delay
                    cost[d1, d2, j] = p.tx_cost
                    bw[d1, d2, j] = p.bandwidth
            self._tables = (delay, cost, bw)
        return self._tables

    def links_between(self, src_vm: int, dst_vm: int) -> tuple[LogicalLink, ...]:
        if src_vm == dst_vm:
            return ()
        if src_vm == DUMMY_VM or dst_vm == DUMMY_VM:
            return (self._dummy(src_vm, dst_vm),)
        d1 = self._net.vms[src_vm].datacenter
        d2 = self._net.vms[dst_vm].datacenter
        if d1 == d2:
            return (LogicalLink((src_vm, dst_vm, 0), src_vm, dst_vm,
                                hops=(), delay=0.0, tx_cost=0.0,
                                bandwidth=math.inf),)
        paths = self.dc_paths.get((d1, d2), ())
        return tuple(
            LogicalLink((src_vm, dst_vm, i), src_vm, dst_vm,
                        hops=p.hops, delay=p.delay, tx_cost=p.tx_cost,
                        bandwidth=p.bandwidth)
            for i, p in enumerate(paths))

    def link(self, key: tuple[int, int, int]) -> LogicalLink:
        src_vm, dst_vm, idx = key
        links = self.links_between(src_vm, dst_vm)
        if idx >= len(links):
            raise KeyError(key)
        return links[idx]

    def _dummy(self, src_vm: int, dst_vm: int) -> LogicalLink:
        return LogicalLink((src_vm, dst_vm, 0), src_vm, dst_vm, hops=(),
                           delay=0.0, tx_cost=0.0, bandwidth=math.inf,
                           is_dummy=True)

    @property
    def n_dummy_links(self) -> int:
        return 2 * len(self._net.vms)


@dataclass
class PhysicalNetwork:
    """Immutable after construction; shared read-only across runs."""

    vms: tuple[ComputeNode, ...]              # vm id == index
    switches: tuple[int, ...]                 # node ids
    node_names: dict[int, str]
    datacenters: tuple[Datacenter, ...]       # dc id == index
    links: tuple[PhysicalLink, ...]           # link id == index
    setup_steps: int = 1
    logical_links: LogicalLinkCatalog | None = None
    dummy_vm: int = DUMMY_VM

    def vm_by_name(self, name: str) -> ComputeNode:
        for vm in self.vms:
            if vm.name == name:
                return vm
        raise KeyError(name)

    @property
    def n_vms(self) -> int:
        return len(self.vms)


def build_network(desc: NetworkDescription) -> PhysicalNetwork:
    """Validate a description and construct the network (dummy VM attached).

    Raises TopologyError for dangling link endpoints, VMs referencing
    unknown datacenters, or nonpositive capacities.
    """
    dc_names = [d.name for d in desc.datacenters]
    if len(set(dc_names)) != len(dc_names):
        raise TopologyError("duplicate datacenter names")
    dc_index = {name: i for i, name in enumerate(dc_names)}

    # VMs first so that vm id == node id == dense index
    node_ids: dict[str, int] = {}
    vms: list[ComputeNode] = []
    for spec in desc.vms:
        if spec.name in node_ids:
            raise TopologyError(f"duplicate node name {spec.name!r}")
        if spec.capacity <= 0:
            raise TopologyError(f"VM {spec.name!r} has nonpositive capacity")
        if spec.datacenter not in dc_index:
            raise TopologyError(f"VM {spec.name!r} references unknown "
                                f"datacenter {spec.datacenter!r}")
        vm_id = len(vms)
        node_ids[spec.name] = vm_id
        vms.append(ComputeNode(vm_id, spec.name, dc_index[spec.datacenter],
                               spec.capacity, spec.cpu_cost, spec.idle_cost,
                               desc.setup_steps))

    switches: list[int] = []
    for name in desc.switches:
        if name in node_ids:
            raise TopologyError(f"duplicate node name {name!r}")
        node_id = len(vms) + len(switches)
        node_ids[name] = node_id
        switches.append(node_id)

    members: dict[int, list[int]] = {i: [] for i in range(len(dc_names))}
    for vm in vms:
        members[vm.datacenter].append(vm.id)

    datacenters: list[Datacenter] = []
    for i, spec in enumerate(desc.datacenters):
        mem = tuple(members[i])
        if spec.gateway is not None:
            if spec.gateway not in node_ids:
                raise TopologyError(f"datacenter {spec.name!r} gateway "
                                    f"{spec.gateway!r} is not a node")
            gateway = node_ids[spec.gateway]
        elif len(mem) == 1:
            gateway = mem[0]
        else:
            raise TopologyError(f"datacenter {spec.name!r} needs an explicit "
                                "gateway")
        capacity = spec.capacity
        if capacity is None:
            capacity = sum(vms[m].capacity for m in mem)
        if capacity <= 0:
            raise TopologyError(f"datacenter {spec.name!r} has nonpositive "
                                "capacity")
        datacenters.append(Datacenter(i, spec.name, capacity, gateway, mem))

    links: list[PhysicalLink] = []
    seen_pairs: set[tuple[int, int]] = set()
    for spec in desc.links:
        for name in (spec.src, spec.dst):
            if name not in node_ids:
                raise TopologyError(f"link references unknown node {name!r}")
        src, dst = node_ids[spec.src], node_ids[spec.dst]
        if (src, dst) in seen_pairs:
            raise TopologyError(f"parallel physical link {spec.src!r}->"
                                f"{spec.dst!r}")
        seen_pairs.add((src, dst))
        if spec.bandwidth <= 0:
            raise TopologyError("nonpositive link bandwidth")
        if spec.intra_dc and (spec.delay != 0 or spec.tx_cost != 0
                              or math.isfinite(spec.bandwidth)):
            raise TopologyError("intra-datacenter links must be ideal")
        links.append(PhysicalLink(len(links), src, dst, spec.bandwidth,
                                  spec.delay, spec.tx_cost, spec.intra_dc))

    names = {v: k for k, v in node_ids.items()}
    names[DUMMY_VM] = "::dummy::"
    return PhysicalNetwork(tuple(vms), tuple(switches), names,
                           tuple(datacenters), tuple(links),
                           desc.setup_steps)


def enumerate_logical_links(net: PhysicalNetwork, k: int = 3) -> PhysicalNetwork:
    """Populate the logical-link catalog with up to k minimum-delay loop-free
    paths per ordered datacenter pair; returns the same network.

    Ordering is deterministic: by delay, then lexicographic hop ids.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    graph = nx.DiGraph()
    vm_gateways = {dc.gateway for dc in net.datacenters if dc.gateway < net.n_vms}
    allowed = set(net.switches) | vm_gateways
    graph.add_nodes_from(allowed)
    link_at: dict[tuple[int, int], PhysicalLink] = {}
    for link in net.links:
        if link.intra_dc:
            continue
        if link.src in allowed and link.dst in allowed:
            graph.add_edge(link.src, link.dst, delay=link.delay)
            link_at[(link.src, link.dst)] = link

    dc_paths: dict[tuple[int, int], tuple[GatewayPath, ...]] = {}
    for d1 in net.datacenters:
        for d2 in net.datacenters:
            if d1.id == d2.id or d1.gateway == d2.gateway:
                continue
            paths = _k_shortest(graph, link_at, d1.gateway, d2.gateway, k)
            if paths:
                dc_paths[(d1.id, d2.id)] = paths

    net.logical_links = LogicalLinkCatalog(net, k, dc_paths)
    return net


def _k_shortest(graph: nx.DiGraph, link_at: dict[tuple[int, int], PhysicalLink],
                src: int, dst: int, k: int) -> tuple[GatewayPath, ...]:
    if src not in graph or dst not in graph or not nx.has_path(graph, src, dst):
        return ()
    collected: list[tuple[float, tuple[int, ...], list[PhysicalLink]]] = []
    kth = math.inf
    for nodes in nx.shortest_simple_paths(graph, src, dst, weight="delay"):
        plinks = [link_at[(a, b)] for a, b in zip(nodes, nodes[1:])]
        hops = tuple(p.id for p in plinks)
        delay = sum(p.delay for p in plinks)
        if len(collected) >= k and delay > kth + _TIE_EPS:
            break
        collected.append((delay, hops, plinks))
        if len(collected) >= k:
            kth = sorted(d for d, _, _ in collected)[k - 1]
    collected.sort(key=lambda item: (item[0], item[1]))
    return tuple(
        GatewayPath(
            hops=hops,
            delay=delay,
            tx_cost=sum(p.tx_cost for p in plinks),
            bandwidth=min((p.bandwidth for p in plinks), default=math.inf),
        )
        for delay, hops, plinks in collected[:k])


def link_load(state, link: PhysicalLink, t: int) -> float:
    """Traffic on a physical link at step t: the sum over all requests, VNF
    pairs and logical links containing the link of the routed traffic."""
    return state.link_usage(link.id, t)
