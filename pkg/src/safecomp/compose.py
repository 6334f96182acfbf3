"""Port-based Moore machines, synchronous composition, explicit-state checking
of the bounded-LTL safety fragment, and the assume-guarantee proof rule.

Semantics: at every tick each component's outputs are read from its Moore
output map, wired inputs copy producer outputs of the same tick, unbound
inputs branch nondeterministically over their domains, and all components
step simultaneously. Moore outputs make cyclic wiring well-defined. A
component may declare several initial states; the product branches over
their cross product at tick zero.
"""

from __future__ import annotations

import itertools
import json
import warnings
from collections import deque
from dataclasses import dataclass

from .contracts import (
    Always,
    Atom,
    ComponentContract,
    DnnContract,
    Eventually,
    LabelIs,
    LabelNotIn,
    Property,
    parse_property,
    property_ports,
    render_property,
)


@dataclass(frozen=True)
class ComponentModel:
    """Finite Moore machine: outputs depend on state only; the transition
    function is total over state x input-domain product."""

    name: str
    inputs: dict[str, tuple[str, ...]]
    outputs: dict[str, tuple[str, ...]]
    states: tuple[str, ...]
    initial: tuple[str, ...]
    output_map: dict[str, dict[str, str]]
    transitions: dict[tuple[str, tuple[str, ...]], str]

    def __post_init__(self):
        if not self.states:
            raise ValueError(f"{self.name}: no states")
        if not self.initial or any(s not in self.states for s in self.initial):
            raise ValueError(f"{self.name}: bad initial states")
        for port, domain in {**self.inputs, **self.outputs}.items():
            if not domain:
                raise ValueError(f"{self.name}: port {port!r} has an empty domain")
        for state in self.states:
            out = self.output_map.get(state)
            if out is None or set(out) != set(self.outputs):
                raise ValueError(f"{self.name}: output map not total at state {state!r}")
            for port, value in out.items():
                if value not in self.outputs[port]:
                    raise ValueError(f"{self.name}: output {port}={value!r} outside domain")
            for key in self.input_keys():
                nxt = self.transitions.get((state, key))
                if nxt is None:
                    raise ValueError(f"{self.name}: no transition from {state!r} on {key}")
                if nxt not in self.states:
                    raise ValueError(f"{self.name}: transition target {nxt!r} unknown")

    def input_ports(self) -> list[str]:
        return sorted(self.inputs)

    def input_keys(self):
        ports = self.input_ports()
        return itertools.product(*(self.inputs[p] for p in ports)) if ports else [()]

    def input_key(self, valuation: dict[str, str]) -> tuple[str, ...]:
        return tuple(valuation[p] for p in self.input_ports())

    def step(self, state: str, valuation: dict[str, str]) -> str:
        return self.transitions[(state, self.input_key(valuation))]


@dataclass(frozen=True)
class Wire:
    src_comp: str
    src_port: str
    dst_comp: str
    dst_port: str


@dataclass(frozen=True)
class System:
    components: tuple[ComponentModel, ...]
    wiring: tuple[Wire, ...] = ()
    ticks_per_second: int = 1

    def __post_init__(self):
        names = [c.name for c in self.components]
        if len(names) != len(set(names)):
            raise ValueError("component names must be unique")
        by_name = {c.name: c for c in self.components}
        seen_dst = set()
        for w in self.wiring:
            src = by_name.get(w.src_comp)
            dst = by_name.get(w.dst_comp)
            if src is None or w.src_port not in src.outputs:
                raise ValueError(f"wire source {w.src_comp}.{w.src_port} not an output")
            if dst is None or w.dst_port not in dst.inputs:
                raise ValueError(f"wire destination {w.dst_comp}.{w.dst_port} not an input")
            if not set(src.outputs[w.src_port]) <= set(dst.inputs[w.dst_port]):
                raise ValueError(
                    f"wire {w.src_comp}.{w.src_port} -> {w.dst_comp}.{w.dst_port}: "
                    "producer domain not accepted by consumer"
                )
            if (w.dst_comp, w.dst_port) in seen_dst:
                raise ValueError(f"input {w.dst_comp}.{w.dst_port} wired twice")
            seen_dst.add((w.dst_comp, w.dst_port))
        # global valuation namespace: output names unique, env inputs must not
        # shadow outputs, and same-named env inputs must agree on domains
        out_names: dict[str, str] = {}
        for c in self.components:
            for port in c.outputs:
                if port in out_names:
                    raise ValueError(f"output port {port!r} produced by both "
                                     f"{out_names[port]} and {c.name}")
                out_names[port] = c.name
        env_domains: dict[str, tuple[str, ...]] = {}
        for c in self.components:
            for port, domain in c.inputs.items():
                if (c.name, port) in seen_dst:
                    continue
                if port in out_names:
                    raise ValueError(f"unbound input {c.name}.{port} shadows an output; wire it")
                if port in env_domains and env_domains[port] != domain:
                    raise ValueError(f"environment input {port!r} declared with two domains")
                env_domains[port] = domain

    def component(self, name: str) -> ComponentModel:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)


class Product:
    """Lazily explored synchronous product of a system's components."""

    def __init__(self, system: System):
        self.system = system
        self.comps = system.components
        index = {c.name: i for i, c in enumerate(self.comps)}
        wired = {}
        for w in system.wiring:
            wired[(index[w.dst_comp], w.dst_port)] = (index[w.src_comp], w.src_port)
        self._wired = wired
        env: dict[str, tuple[str, ...]] = {}
        for i, c in enumerate(self.comps):
            for port, domain in c.inputs.items():
                if (i, port) not in wired:
                    env[port] = domain
        self.env_ports: list[tuple[str, tuple[str, ...]]] = sorted(env.items())

    def initial_states(self) -> list[tuple[str, ...]]:
        return list(itertools.product(*(c.initial for c in self.comps)))

    def outputs_of(self, states: tuple[str, ...]) -> dict[str, str]:
        valuation: dict[str, str] = {}
        for c, s in zip(self.comps, states):
            valuation.update(c.output_map[s])
        return valuation

    def env_valuations(self):
        names = [n for n, _ in self.env_ports]
        domains = [d for _, d in self.env_ports]
        for combo in itertools.product(*domains) if names else [()]:
            yield dict(zip(names, combo))

    def valuation(self, states: tuple[str, ...], env: dict[str, str]) -> dict[str, str]:
        v = self.outputs_of(states)
        v.update(env)
        return v

    def step(self, states: tuple[str, ...], env: dict[str, str]) -> tuple[str, ...]:
        outputs = [c.output_map[s] for c, s in zip(self.comps, states)]
        nxt = []
        for i, (c, s) in enumerate(zip(self.comps, states)):
            inputs = {}
            for port in c.inputs:
                src = self._wired.get((i, port))
                inputs[port] = outputs[src[0]][src[1]] if src else env[port]
            nxt.append(c.step(s, inputs))
        return tuple(nxt)

    def ports(self) -> dict[str, tuple[str, ...]]:
        """Global valuation ports: every component output plus env inputs."""
        ports = dict(self.env_ports)
        for c in self.comps:
            ports.update(c.outputs)
        return ports

    def explore(self, limit: int | None = None) -> list[tuple[str, ...]]:
        """Reachable product states in BFS order."""
        initial = self.initial_states()
        seen = set(initial)
        order = list(initial)
        queue = deque(initial)
        while queue:
            states = queue.popleft()
            for env in self.env_valuations():
                nxt = self.step(states, env)
                if nxt not in seen:
                    seen.add(nxt)
                    order.append(nxt)
                    queue.append(nxt)
                    if limit is not None and len(order) > limit:
                        raise RuntimeError(f"state space exceeds {limit} states")
        return order


def compose(system: System) -> Product:
    return Product(system)


# ---------------------------------------------------------------------------
# Monitors for the safety fragment


class PropertyMonitor:
    """Tick-by-tick violation detector for one Always property.

    Bounded response tracks only the earliest outstanding deadline: satisfying
    the consequent clears every pending obligation at once, so later triggers
    never have an earlier deadline than the current one.
    """

    def __init__(self, prop: Property):
        self.prop = prop

    def initial(self):
        return None

    def step(self, mem, valuation: dict[str, str]):
        cons = self.prop.consequent
        if isinstance(cons, Eventually):
            if cons.atom.holds(valuation):
                return False, None
            pending = mem
            if pending is not None:
                pending -= 1
                if pending <= 0:
                    return True, None
            if self.prop.antecedent.holds(valuation):
                pending = cons.bound if pending is None else min(pending, cons.bound)
            return False, pending
        violated = self.prop.antecedent.holds(valuation) and not cons.holds(valuation)
        return violated, None


class ContractMonitor:
    """Prefix membership in a contract's language.

    A prefix leaves the language ("goes bad") exactly when the guarantee is
    violated at a tick where the assumption has not been violated at or
    before that same tick. Once the assumption dies everything is allowed;
    once bad, always bad.
    """

    def __init__(self, contract: ComponentContract):
        self.contract = contract
        self._a = PropertyMonitor(contract.assumption) if contract.assumption else None
        self._g = PropertyMonitor(contract.guarantee)

    def initial(self):
        a0 = self._a.initial() if self._a else None
        return (False, a0, False, self._g.initial(), False)

    def step(self, state, valuation: dict[str, str]):
        a_dead, a_mem, g_dead, g_mem, bad = state
        if bad:
            return state
        if self._a is not None and not a_dead:
            a_viol, a_mem = self._a.step(a_mem, valuation)
            a_dead = a_dead or a_viol
        g_viol = False
        if not g_dead:
            g_viol, g_mem = self._g.step(g_mem, valuation)
            g_dead = g_dead or g_viol
        return (a_dead, a_mem, g_dead, g_mem, g_viol and not a_dead)

    @staticmethod
    def is_bad(state) -> bool:
        return state[4]


class DnnConstraintMonitor:
    """Atemporal region-contract constraint: whenever the perception token
    names a contracted region, the class output must obey its guarantee."""

    def __init__(self, token_port: str, class_port: str,
                 token_map: dict[str, LabelIs | LabelNotIn | None]):
        self.token_port = token_port
        self.class_port = class_port
        self.token_map = token_map

    def initial(self):
        return (False,)

    def step(self, state, valuation: dict[str, str]):
        if state[0]:
            return state
        guarantee = self.token_map.get(valuation[self.token_port])
        if guarantee is None:
            return state
        cls = valuation[self.class_port]
        if isinstance(guarantee, LabelIs):
            return (cls != guarantee.label,)
        return (cls in guarantee.labels,)

    @staticmethod
    def is_bad(state) -> bool:
        return state[0]


# ---------------------------------------------------------------------------
# Property checking


@dataclass(frozen=True)
class TraceStep:
    states: tuple[str, ...]
    inputs: dict[str, str]
    valuation: dict[str, str]


@dataclass(frozen=True)
class CheckResult:
    holds: bool
    counterexample: tuple[TraceStep, ...] | None
    states_explored: int

    def __post_init__(self):
        if self.holds and self.counterexample is not None:
            raise ValueError("holds excludes a counterexample")
        if not self.holds and self.counterexample is None:
            raise ValueError("a failed check needs a counterexample")


def _bind_check(ports: dict[str, tuple[str, ...]], p: Property):
    atoms = [p.antecedent]
    atoms.append(p.consequent.atom if isinstance(p.consequent, Eventually) else p.consequent)
    for atom in atoms:
        for port, value in atom.literals:
            if port not in ports:
                raise ValueError(f"property references unknown port {port!r}")
            if value not in ports[port]:
                raise ValueError(f"property value {port}={value!r} outside domain {ports[port]}")


def check_property(system: System, p: Property) -> CheckResult:
    """BFS over product x monitor states; a counterexample is a shortest trace."""
    prod = compose(system)
    _bind_check(prod.ports(), p)
    mon = PropertyMonitor(p)
    roots = [(s, mon.initial()) for s in prod.initial_states()]
    visited = set(roots)
    parents: dict = {node: None for node in roots}
    queue = deque(roots)
    explored = 0
    while queue:
        node = queue.popleft()
        states, mem = node
        explored += 1
        for env in prod.env_valuations():
            v = prod.valuation(states, env)
            violated, mem2 = mon.step(mem, v)
            if violated:
                steps = _path_to(parents, node, prod)
                steps.append(TraceStep(states, env, v))
                return CheckResult(False, tuple(steps), explored)
            nxt = (prod.step(states, env), mem2)
            if nxt not in visited:
                visited.add(nxt)
                parents[nxt] = (node, env)
                queue.append(nxt)
    return CheckResult(True, None, explored)


def _path_to(parents: dict, node, prod: Product) -> list[TraceStep]:
    edges = []
    while parents[node] is not None:
        prev, env = parents[node]
        edges.append((prev, env))
        node = prev
    edges.reverse()
    return [TraceStep(states, env, prod.valuation(states, env))
            for (states, _mem), env in edges]


def replay_violation(system: System, p: Property, trace) -> bool:
    """Deterministically re-run a counterexample trace; true iff it reproduces
    the violation at the final tick and only there."""
    prod = compose(system)
    mon = PropertyMonitor(p)
    mem = mon.initial()
    states = trace[0].states
    if states not in set(prod.initial_states()):
        return False
    for i, step in enumerate(trace):
        if step.states != states:
            return False
        v = prod.valuation(states, step.inputs)
        if v != step.valuation:
            return False
        violated, mem = mon.step(mem, v)
        if violated != (i == len(trace) - 1):
            return False
        states = prod.step(states, step.inputs)
    return True


def check_implication(constraints: list, p: Property,
                      ports: dict[str, tuple[str, ...]]) -> CheckResult:
    """Do all valuation sequences admitted by the constraint monitors satisfy p?

    Explores free valuations over `ports`; a violation counts only while every
    constraint prefix is still inside its language (a constraint breaking at
    the same tick absolves the trace). Exact for safety languages.
    """
    _bind_check(ports, p)
    names = sorted(ports)
    domains = [ports[n] for n in names]
    pmon = PropertyMonitor(p)
    root = (tuple(c.initial() for c in constraints), pmon.initial())
    visited = {root}
    parents: dict = {root: None}
    queue = deque([root])
    explored = 0
    while queue:
        node = queue.popleft()
        cstates, pmem = node
        explored += 1
        for combo in itertools.product(*domains) if names else [()]:
            v = dict(zip(names, combo))
            new_c = tuple(c.step(s, v) for c, s in zip(constraints, cstates))
            in_language = all(not c.is_bad(s) for c, s in zip(constraints, new_c))
            p_viol, pmem2 = pmon.step(pmem, v)
            if p_viol and in_language:
                chain = []
                cursor = node
                while parents[cursor] is not None:
                    prev, prev_v = parents[cursor]
                    chain.append(prev_v)
                    cursor = prev
                chain.reverse()
                steps = [TraceStep((), sv, sv) for sv in chain] + [TraceStep((), v, v)]
                return CheckResult(False, tuple(steps), explored)
            if not in_language or p_viol:
                continue  # absorbing either way; no counterexample can follow
            nxt = (new_c, pmem2)
            if nxt not in visited:
                visited.add(nxt)
                parents[nxt] = (node, v)
                queue.append(nxt)
    return CheckResult(True, None, explored)


# ---------------------------------------------------------------------------
# Contract observers and generators


def _contract_ports(c: ComponentContract) -> dict[str, tuple[str, ...]]:
    return {**c.inputs, **c.outputs}


def contract_monitor(c: ComponentContract | Property,
                     port_domains: dict[str, tuple[str, ...]] | None = None,
                     name: str = "monitor") -> ComponentModel:
    """Deterministic observer with a boolean `ok` output.

    `ok` stays "true" exactly while the observed prefix satisfies the
    contract. Being a Moore output, the flag reflects the ticks already
    consumed: a violation at tick t shows as ok="false" from tick t+1.
    """
    if isinstance(c, Always):
        if port_domains is None:
            raise ValueError("port domains are required for a bare property")
        c = ComponentContract(name, None, c, inputs=dict(port_domains), outputs={})
    ports = _contract_ports(c)
    if port_domains:
        ports = {**ports, **port_domains}
    needed = property_ports(c.guarantee) | (property_ports(c.assumption) if c.assumption else set())
    missing = needed - set(ports)
    if missing:
        raise ValueError(f"no domain declared for ports {sorted(missing)}")
    ports = {p: tuple(ports[p]) for p in sorted(needed)}

    cm = ContractMonitor(c)
    port_names = sorted(ports)
    state_names: dict = {}
    transitions: dict = {}

    def intern(mstate) -> str:
        if mstate not in state_names:
            state_names[mstate] = f"m{len(state_names)}"
        return state_names[mstate]

    queue = deque([cm.initial()])
    intern(cm.initial())
    seen = {cm.initial()}
    while queue:
        mstate = queue.popleft()
        for combo in itertools.product(*(ports[p] for p in port_names)) if port_names else [()]:
            v = dict(zip(port_names, combo))
            nxt = cm.step(mstate, v)
            if nxt not in seen:
                seen.add(nxt)
                intern(nxt)
                queue.append(nxt)
            transitions[(state_names[mstate], tuple(combo))] = state_names[nxt]

    output_map = {sn: {"ok": "false" if ContractMonitor.is_bad(ms) else "true"}
                  for ms, sn in state_names.items()}
    return ComponentModel(
        name=name,
        inputs=ports,
        outputs={"ok": ("true", "false")},
        states=tuple(state_names.values()),
        initial=(state_names[cm.initial()],),
        output_map=output_map,
        transitions=transitions,
    )


def most_general_environment(c: ComponentContract, name: str | None = None) -> ComponentModel:
    """Maximal nondeterministic generator of the contract's output ports.

    The machine's trace set, projected on its outputs, is exactly the set of
    prefixes the (safety) contract allows: free choices arrive on one pick
    port per output and are redirected to a canonical allowed valuation
    whenever the chosen one would leave the language (deadline bookkeeping
    forces pending consequents by their bound).
    """
    out_ports = sorted(c.outputs)
    if not out_ports:
        raise ValueError("contract declares no output ports to generate")
    in_ports = sorted(c.inputs)

    def check_realizable(prop: Property):
        cons_atom = prop.consequent.atom if isinstance(prop.consequent, Eventually) else prop.consequent
        if not cons_atom.ports() <= set(c.outputs):
            raise ValueError("guarantee consequent must constrain output ports only")
        if not isinstance(prop.consequent, Eventually):
            if not prop.antecedent.ports() <= set(c.outputs):
                raise ValueError(
                    "immediate response to same-tick inputs is not Moore-realizable; "
                    "use a bounded-eventually consequent"
                )

    check_realizable(c.guarantee)

    cm = ContractMonitor(c)
    out_vals = [dict(zip(out_ports, combo))
                for combo in itertools.product(*(c.outputs[p] for p in out_ports))]
    in_vals = [dict(zip(in_ports, combo))
               for combo in itertools.product(*(c.inputs[p] for p in in_ports))] or [{}]

    def allowed(mstate, w: dict[str, str]) -> bool:
        return all(not ContractMonitor.is_bad(cm.step(mstate, {**i, **w})) for i in in_vals)

    def fallback(mstate) -> dict[str, str]:
        for w in out_vals:
            if allowed(mstate, w):
                return w
        raise ValueError("contract admits no continuation; conflicting obligations")

    pick_ports = {f"{p}_pick": c.outputs[p] for p in out_ports}
    state_names: dict = {}

    def key_of(mstate, w):
        return (mstate, tuple(w[p] for p in out_ports))

    def intern(mstate, w) -> str:
        k = key_of(mstate, w)
        if k not in state_names:
            state_names[k] = f"g{len(state_names)}"
        return state_names[k]

    initial = [(cm.initial(), w) for w in out_vals if allowed(cm.initial(), w)]
    if not initial:
        raise ValueError("contract rejects every initial valuation")
    for ms, w in initial:
        intern(ms, w)
    queue = deque(initial)
    seen = {key_of(ms, w) for ms, w in initial}
    transitions: dict = {}
    input_names = sorted(list(c.inputs) + list(pick_ports))
    while queue:
        mstate, w = queue.popleft()
        sn = state_names[key_of(mstate, w)]
        for i in in_vals:
            m2 = cm.step(mstate, {**i, **w})
            if ContractMonitor.is_bad(m2):
                raise AssertionError("generator emitted a forbidden valuation")
            for combo in itertools.product(*(pick_ports[f"{p}_pick"] for p in out_ports)):
                pick = dict(zip(out_ports, combo))
                w2 = pick if allowed(m2, pick) else fallback(m2)
                nsn = intern(m2, w2)
                full_inputs = {**i, **{f"{p}_pick": pick[p] for p in out_ports}}
                key = tuple(full_inputs[p] for p in input_names)
                transitions[(sn, key)] = nsn
                if key_of(m2, w2) not in seen:
                    seen.add(key_of(m2, w2))
                    queue.append((m2, w2))

    output_map = {state_names[k]: dict(zip(out_ports, k[1])) for k in state_names}
    return ComponentModel(
        name=name or f"env_{c.name}",
        inputs={**{p: c.inputs[p] for p in in_ports}, **pick_ports},
        outputs=dict(c.outputs),
        states=tuple(state_names.values()),
        initial=tuple(state_names[key_of(ms, w)] for ms, w in initial),
        output_map=output_map,
        transitions=transitions,
    )


def abstract_dnn_component(contract: DnnContract, class_domain,
                           token_port: str = "x", class_port: str = "Class",
                           token_map: dict[str, LabelIs | LabelNotIn | None] | None = None,
                           name: str = "NN") -> ComponentModel:
    """Abstract the network to a Moore classifier over perception tokens.

    The input domain has one token per contract region plus "outside"; the
    class output answers one tick later (Moore latch): a label_is region pins
    it, label_not_in leaves the allowed labels, outside leaves all labels.
    """
    class_domain = tuple(class_domain)
    if token_map is None:
        if not contract.regions:
            warnings.warn("empty contract: abstract classifier is fully nondeterministic")
        token_map = {rc.id: rc.guarantee for rc in sorted(contract.regions, key=lambda r: r.id)}
    tokens = tuple(token_map) + (("outside",) if "outside" not in token_map else ())

    def allowed_labels(token: str) -> tuple[str, ...]:
        g = token_map.get(token)
        if g is None:
            return class_domain
        if isinstance(g, LabelIs):
            return (g.label,)
        return tuple(l for l in class_domain if l not in g.labels)

    for token in tokens:
        if not allowed_labels(token):
            raise ValueError(f"token {token!r} admits no class label")

    states = []
    output_map = {}
    for token in tokens:
        for cls in allowed_labels(token):
            states.append((token, cls))
    state_name = {s: f"{s[0]}|{s[1]}" for s in states}
    for s in states:
        output_map[state_name[s]] = {class_port: s[1]}
    pick = f"{class_port}_pick"
    input_names = sorted([token_port, pick])
    transitions = {}
    for s in states:
        for t2 in tokens:
            for p2 in class_domain:
                adm = allowed_labels(t2)
                cls2 = p2 if p2 in adm else adm[0]
                inputs = {token_port: t2, pick: p2}
                key = tuple(inputs[p] for p in input_names)
                transitions[(state_name[s], key)] = state_name[(t2, cls2)]
    initial = tuple(state_name[("outside", cls)] for cls in allowed_labels("outside"))
    return ComponentModel(
        name=name,
        inputs={token_port: tokens, pick: class_domain},
        outputs={class_port: class_domain},
        states=tuple(state_name[s] for s in states),
        initial=initial,
        output_map=output_map,
        transitions=transitions,
    )


# ---------------------------------------------------------------------------
# Assume-guarantee rule


@dataclass(frozen=True)
class PremiseReport:
    name: str
    holds: bool
    method: str
    detail: str = ""
    counterexample: tuple[TraceStep, ...] | None = None
    states_explored: int = 0


@dataclass(frozen=True)
class AGReport:
    premises: tuple[PremiseReport, ...]
    conclusion: bool
    property_text: str

    def premise(self, name: str) -> PremiseReport:
        for pr in self.premises:
            if pr.name == name:
                return pr
        raise KeyError(name)


def wire_by_name(system: System, comp: ComponentModel) -> System:
    """Add a component and wire its outputs to same-named unbound inputs."""
    bound = {(w.dst_comp, w.dst_port) for w in system.wiring}
    new_wires = list(system.wiring)
    for c in system.components:
        for port in c.inputs:
            if (c.name, port) in bound:
                continue
            if port in comp.outputs:
                new_wires.append(Wire(comp.name, port, c.name, port))
    return System(system.components + (comp,), tuple(new_wires), system.ticks_per_second)


def _check_under_assumption(system: System, assumption: Property | None,
                            guarantee: Property,
                            port_domains: dict[str, tuple[str, ...]]) -> CheckResult:
    if assumption is None:
        return check_property(system, guarantee)
    gen_ports = {p: port_domains[p] for p in sorted(property_ports(assumption))}
    env = most_general_environment(
        ComponentContract("assumption", None, assumption, inputs={}, outputs=gen_ports),
        name="assumption_env",
    )
    return check_property(wire_by_name(system, env), guarantee)


def audit_dnn_contract(contract: DnnContract) -> tuple[bool, str]:
    """Premise 2 for a DNN: every region contract must trace to a proved verdict."""
    for rc in contract.regions:
        summary = rc.provenance.get("summary")
        if summary not in ("FullySafe", "TargetedSafe"):
            return False, f"region {rc.id}: provenance summary {summary!r} is not a proof"
        if isinstance(rc.guarantee, LabelIs) and summary != "FullySafe":
            return False, f"region {rc.id}: label_is guarantee needs a FullySafe verdict"
        if isinstance(rc.guarantee, LabelNotIn) and not rc.guarantee.labels:
            return False, f"region {rc.id}: empty exclusion set"
    n = len(contract.regions)
    return True, f"{n} region contract(s) backed by verifier verdicts"


def check_assume_guarantee(m1: System, c1: ComponentContract,
                           m2: DnnContract | ComponentContract, p: Property,
                           m2_model: System | ComponentModel | None = None,
                           token_port: str = "x", class_port: str = "Class",
                           class_domain=None,
                           token_map: dict | None = None) -> AGReport:
    """The compositional proof rule: three premises checked independently.

    1. m1 under the most general environment of c1's assumption satisfies
       c1's guarantee.
    2. The second component satisfies its contract: a DNN contract is
       discharged by auditing its verifier provenance; a component contract
       is model checked against m2_model.
    3. Every joint behavior allowed by both contracts satisfies p (exact for
       this safety fragment, checked over monitor-filtered free valuations).

    The conclusion m1 || m2 |= p is asserted only when all premises hold.
    """
    prod1 = compose(m1)
    premise1_result = _check_under_assumption(m1, c1.assumption, c1.guarantee,
                                              {**prod1.ports(), **_contract_ports(c1)})
    premise1 = PremiseReport(
        name="M1 |= C1",
        holds=premise1_result.holds,
        method="model-checking",
        detail=f"guarantee {render_property(c1.guarantee)}",
        counterexample=premise1_result.counterexample,
        states_explored=premise1_result.states_explored,
    )

    ports: dict[str, tuple[str, ...]] = dict(_contract_ports(c1))
    constraints: list = [ContractMonitor(c1)]
    if isinstance(m2, DnnContract):
        ok, detail = audit_dnn_contract(m2)
        premise2 = PremiseReport(name="M2 |= C2", holds=ok, method="provenance-audit",
                                 detail=detail)
        if class_domain is None:
            raise ValueError("class_domain is required for a DNN contract")
        if token_map is None:
            token_map = {rc.id: rc.guarantee for rc in sorted(m2.regions, key=lambda r: r.id)}
        tokens = tuple(token_map) + (("outside",) if "outside" not in token_map else ())
        ports.setdefault(token_port, tokens)
        ports.setdefault(class_port, tuple(class_domain))
        constraints.append(DnnConstraintMonitor(token_port, class_port, token_map))
    else:
        if m2_model is None:
            raise ValueError("m2_model is required to check a component contract")
        m2_system = m2_model if isinstance(m2_model, System) else System((m2_model,))
        prod2 = compose(m2_system)
        premise2_result = _check_under_assumption(m2_system, m2.assumption, m2.guarantee,
                                                  {**prod2.ports(), **_contract_ports(m2)})
        premise2 = PremiseReport(
            name="M2 |= C2",
            holds=premise2_result.holds,
            method="model-checking",
            detail=f"guarantee {render_property(m2.guarantee)}",
            counterexample=premise2_result.counterexample,
            states_explored=premise2_result.states_explored,
        )
        ports.update(_contract_ports(m2))
        constraints.append(ContractMonitor(m2))

    for port in property_ports(p):
        if port not in ports:
            raise ValueError(f"property port {port!r} is not covered by the contracts")
    premise3_result = check_implication(constraints, p, ports)
    premise3 = PremiseReport(
        name="C1 & C2 => P",
        holds=premise3_result.holds,
        method="monitored-implication",
        detail=f"property {render_property(p)}",
        counterexample=premise3_result.counterexample,
        states_explored=premise3_result.states_explored,
    )

    premises = (premise1, premise2, premise3)
    return AGReport(premises, all(pr.holds for pr in premises), render_property(p))


# ---------------------------------------------------------------------------
# JSON model format


def component_from_json(obj: dict) -> ComponentModel:
    """Build a component from the JSON model format, expanding wildcard rows.

    A transition row is {"from": s, "when": {port: value or "*"}, "to": s2};
    omitted ports count as wildcards. Rows that cover the same (state, input
    valuation) pair twice are rejected.
    """
    inputs = {p: tuple(str(v) for v in d) for p, d in obj.get("inputs", {}).items()}
    outputs = {p: tuple(str(v) for v in d) for p, d in obj.get("outputs", {}).items()}
    states = tuple(str(s) for s in obj["states"])
    init = obj["init"]
    initial = tuple(str(s) for s in (init if isinstance(init, list) else [init]))
    output_map = {str(s): {p: str(v) for p, v in out.items()}
                  for s, out in obj.get("outputs_map", {}).items()}
    port_names = sorted(inputs)
    transitions: dict[tuple[str, tuple[str, ...]], str] = {}
    for row_num, row in enumerate(obj.get("transitions", []), start=1):
        src = str(row["from"])
        dst = str(row["to"])
        when = {p: str(v) for p, v in row.get("when", {}).items()}
        for port in when:
            if port not in inputs:
                raise ValueError(f"transition row {row_num}: unknown port {port!r}")
        choices = []
        for port in port_names:
            v = when.get(port, "*")
            choices.append(inputs[port] if v == "*" else (v,))
        for combo in itertools.product(*choices) if port_names else [()]:
            key = (src, combo)
            if key in transitions:
                raise ValueError(f"transition row {row_num}: overlaps an earlier row "
                                 f"at state {src!r}, inputs {combo}")
            transitions[key] = dst
    return ComponentModel(
        name=str(obj["name"]),
        inputs=inputs,
        outputs=outputs,
        states=states,
        initial=initial,
        output_map=output_map,
        transitions=transitions,
    )


def component_to_json(comp: ComponentModel) -> dict:
    ports = comp.input_ports()
    rows = [
        {"from": state, "when": dict(zip(ports, key)), "to": target}
        for (state, key), target in sorted(comp.transitions.items())
    ]
    return {
        "name": comp.name,
        "states": list(comp.states),
        "init": list(comp.initial),
        "inputs": {p: list(d) for p, d in comp.inputs.items()},
        "outputs": {p: list(d) for p, d in comp.outputs.items()},
        "outputs_map": {s: dict(v) for s, v in comp.output_map.items()},
        "transitions": rows,
    }


def system_to_json(system: System, properties=()) -> dict:
    return {
        "components": [component_to_json(c) for c in system.components],
        "wiring": [{"from": f"{w.src_comp}.{w.src_port}",
                    "to": f"{w.dst_comp}.{w.dst_port}"} for w in system.wiring],
        "ticks_per_second": system.ticks_per_second,
        "properties": [render_property(p) for p in properties],
    }


def system_from_json(obj: dict) -> tuple[System, list[Property]]:
    components = tuple(component_from_json(c) for c in obj["components"])
    wires = []
    for w in obj.get("wiring", []):
        src_comp, src_port = w["from"].split(".", 1)
        dst_comp, dst_port = w["to"].split(".", 1)
        wires.append(Wire(src_comp, src_port, dst_comp, dst_port))
    system = System(components, tuple(wires),
                    ticks_per_second=int(obj.get("ticks_per_second", 1)))
    properties = [parse_property(t) for t in obj.get("properties", [])]
    return system, properties


def parse_system(text: str) -> tuple[System, list[Property]]:
    return system_from_json(json.loads(text))
