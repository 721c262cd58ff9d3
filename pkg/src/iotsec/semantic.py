"""Triple annotation, pattern queries and context-aware policy rules.

Text format (one statement per line, ``#`` starts a comment)::

    class <name>
    subclass <child> <parent>
    pred <name> <domain> <range>
    rule <id> <priority> <effect> pattern(<s>,<p>,<o>) [when <atom>[,<atom>...]]

``?`` is the wildcard in a pattern position.  An atom is
``<field><op><value>`` with field one of sim_time, threat_level,
location_zone, tier and op one of ``= != < <= > >=``.  Ordering atoms
compare threat levels as low < elevated < high, tiers as
Full < Restricted < Quarantined and sim_time numerically;
location_zone only supports ``=`` and ``!=``.  Tokens are separated by
single or repeated spaces; no token may contain whitespace.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

RDF_TYPE = "rdf:type"
EFFECTS = ("allow", "deny", "step_up")
EFFECT_RANK = {"deny": 0, "step_up": 1, "allow": 2}  # tie order: deny first
THREAT_LEVELS = ("low", "elevated", "high")
TIERS = ("Full", "Restricted", "Quarantined")
FIELDS = ("sim_time", "threat_level", "location_zone", "tier")
OPS = ("<=", ">=", "!=", "=", "<", ">")


class SemanticError(Exception):
    pass


class UnknownPredicate(SemanticError):
    pass


class RuleSyntaxError(SemanticError):
    pass


class Literal(str):
    """Literal term; only valid in object position."""

    __slots__ = ()

    def __repr__(self):
        return f"Literal({str.__repr__(self)})"


@dataclass(frozen=True)
class Triple:
    s: str
    p: str
    o: str

    def __post_init__(self):
        if not self.s or not self.p or not self.o:
            raise ValueError("triple positions must be non-empty")
        if isinstance(self.s, Literal) or isinstance(self.p, Literal):
            raise ValueError("literals are only allowed in object position")

    def __iter__(self):
        return iter((self.s, self.p, self.o))


# ---------------------------------------------------------------------------
# ontology

@dataclass
class Ontology:
    classes: set[str] = field(default_factory=set)
    parents: dict[str, set[str]] = field(default_factory=lambda: defaultdict(set))
    predicates: dict[str, tuple[str, str]] = field(default_factory=dict)

    def add_class(self, name: str) -> None:
        self.classes.add(name)

    def add_subclass(self, child: str, parent: str) -> None:
        self.parents[child].add(parent)

    def add_predicate(self, name: str, domain: str, range_: str) -> None:
        self.predicates[name] = (domain, range_)

    def superclasses(self, cls: str) -> set[str]:
        """Reflexive-transitive superclasses of ``cls``."""
        seen = {cls}
        stack = [cls]
        while stack:
            for p in self.parents.get(stack.pop(), ()):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def subclasses(self, cls: str) -> set[str]:
        """Reflexive-transitive subclasses of ``cls``."""
        return {c for c in self.classes | set(self.parents) if cls in self.superclasses(c)} | {cls}


@dataclass(frozen=True)
class OntologyReport:
    cycles: list[list[str]]
    violations: list[str]

    @property
    def valid(self) -> bool:
        return not self.cycles and not self.violations


def validate_ontology(ontology: Ontology) -> OntologyReport:
    cycles: list[list[str]] = []
    color: dict[str, int] = {}
    path: list[str] = []

    def visit(node: str) -> None:
        color[node] = 1
        path.append(node)
        for p in sorted(ontology.parents.get(node, ())):
            state = color.get(p, 0)
            if state == 0:
                visit(p)
            elif state == 1:
                cycles.append(path[path.index(p):] + [p])
        path.pop()
        color[node] = 2

    for node in sorted(set(ontology.parents) | ontology.classes):
        if color.get(node, 0) == 0:
            visit(node)

    violations = []
    for child in sorted(ontology.parents):
        for parent in sorted(ontology.parents[child]):
            for name in (child, parent):
                if name not in ontology.classes:
                    violations.append(f"subclass {child} {parent}: undeclared class {name}")
    for name in sorted(ontology.predicates):
        domain, range_ = ontology.predicates[name]
        if domain not in ontology.classes:
            violations.append(f"pred {name}: undeclared domain {domain}")
        if range_ not in ontology.classes:
            violations.append(f"pred {name}: undeclared range {range_}")
    return OntologyReport(cycles, violations)


# ---------------------------------------------------------------------------
# triple store

class TripleStore:
    """Set-semantics store with per-position indexes; results keep insertion order."""

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: list[Triple] = []
        self._seen: dict[Triple, int] = {}
        self._index = (defaultdict(list), defaultdict(list), defaultdict(list))
        for t in triples:
            self.add(t)

    def add(self, triple: Triple) -> bool:
        if not isinstance(triple, Triple):
            triple = Triple(*triple)
        if triple in self._seen:
            return False
        pos = len(self._triples)
        self._triples.append(triple)
        self._seen[triple] = pos
        for i, term in enumerate((triple.s, triple.p, triple.o)):
            self._index[i][term].append(pos)
        return True

    def extend(self, triples: Iterable[Triple]) -> None:
        for t in triples:
            self.add(t)

    def __len__(self):
        return len(self._triples)

    def __iter__(self):
        return iter(self._triples)

    def __contains__(self, triple) -> bool:
        return triple in self._seen


def _bound(term) -> bool:
    return term is not None and term != "?"


def query_pattern(store: TripleStore, template: Sequence[str | None]) -> list[Triple]:
    s, p, o = template
    bound = [(i, t) for i, t in enumerate((s, p, o)) if _bound(t)]
    if not bound:
        return list(store)
    if len(bound) == 3:
        t = Triple(s, p, o)
        return [t] if t in store else []
    # intersect the candidate position lists, starting from the smallest
    lists = sorted((store._index[i].get(t, []) for i, t in bound), key=len)
    positions = lists[0]
    for other in lists[1:]:
        keep = set(other)
        positions = [x for x in positions if x in keep]
    return [store._triples[x] for x in positions]


# ---------------------------------------------------------------------------
# annotation

@dataclass(frozen=True)
class Reading:
    device_id: str
    channel: str
    value: float
    time: float


ANNOTATION_PREDICATES = ("producedBy", "onChannel", "hasValue", "atTime")


def _fmt_number(x: float) -> str:
    return repr(float(x))


class Annotator:
    """Turns raw readings into observation triples with per-device sequence numbers."""

    def __init__(self, ontology: Ontology, device_classes: dict[str, str]):
        self.ontology = ontology
        self.device_classes = device_classes
        self._seq: dict[str, int] = defaultdict(int)

    def annotate(self, reading: Reading) -> list[Triple]:
        return annotate_reading(reading, self.ontology, self.device_classes, self._seq)


def annotate_reading(reading: Reading, ontology: Ontology, device_classes: dict[str, str],
                     counters: dict[str, int]) -> list[Triple]:
    if reading.device_id not in device_classes:
        raise SemanticError(f"unknown device class for {reading.device_id}")
    for name in ANNOTATION_PREDICATES:
        if name not in ontology.predicates:
            raise UnknownPredicate(name)
    if reading.channel not in ontology.predicates:
        raise UnknownPredicate(reading.channel)
    seq = counters.get(reading.device_id, 0)
    counters[reading.device_id] = seq + 1
    obs = f"obs:{reading.device_id}:{seq}"
    return [
        Triple(obs, RDF_TYPE, "Observation"),
        Triple(obs, "producedBy", reading.device_id),
        Triple(obs, "onChannel", reading.channel),
        Triple(obs, "hasValue", Literal(_fmt_number(reading.value))),
        Triple(obs, "atTime", Literal(_fmt_number(reading.time))),
    ]


# ---------------------------------------------------------------------------
# policy rules

@dataclass(frozen=True)
class ContextSnapshot:
    sim_time: float = 0.0
    threat_level: str = "low"
    location_zone: str = "default"
    tier: str = "Full"


@dataclass(frozen=True)
class Atom:
    field: str
    op: str
    value: str

    def __post_init__(self):
        if self.field not in FIELDS:
            raise RuleSyntaxError(f"unknown context field {self.field!r}")
        if self.op not in OPS:
            raise RuleSyntaxError(f"unknown operator {self.op!r}")
        if self.field == "location_zone" and self.op not in ("=", "!="):
            raise RuleSyntaxError("location_zone supports only = and !=")
        if self.field == "threat_level" and self.value not in THREAT_LEVELS:
            raise RuleSyntaxError(f"unknown threat level {self.value!r}")
        if self.field == "tier" and self.value not in TIERS:
            raise RuleSyntaxError(f"unknown tier {self.value!r}")
        if self.field == "sim_time":
            try:
                float(self.value)
            except ValueError:
                raise RuleSyntaxError(f"sim_time needs a number, got {self.value!r}") from None

    def holds(self, ctx: ContextSnapshot) -> bool:
        actual = getattr(ctx, self.field)
        actual = getattr(actual, "value", actual)
        if self.field == "sim_time":
            a, b = float(actual), float(self.value)
        elif self.field == "threat_level":
            a, b = THREAT_LEVELS.index(actual), THREAT_LEVELS.index(self.value)
        elif self.field == "tier":
            a, b = TIERS.index(actual), TIERS.index(self.value)
        else:
            a, b = actual, self.value
        op = self.op
        if op == "=":
            return a == b
        if op == "!=":
            return a != b
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">":
            return a > b
        return a >= b

    def __str__(self):
        return f"{self.field}{self.op}{self.value}"


@dataclass(frozen=True)
class PolicyRule:
    rule_id: str
    pattern: tuple[str | None, str | None, str | None]
    conditions: tuple[Atom, ...] = ()
    effect: str = "deny"
    priority: int = 0

    def __post_init__(self):
        if self.effect not in EFFECTS:
            raise RuleSyntaxError(f"unknown effect {self.effect!r}")
        if self.priority < 0:
            raise RuleSyntaxError("priority must be >= 0")
        pattern = tuple(None if t in (None, "?") else t for t in self.pattern)
        if len(pattern) != 3:
            raise RuleSyntaxError("pattern needs three positions")
        object.__setattr__(self, "pattern", pattern)
        if all(t is None for t in pattern) and not self.conditions:
            raise RuleSyntaxError(f"rule {self.rule_id}: pattern and condition are both trivial")


@dataclass(frozen=True)
class Verdict:
    effect: str
    matched_rule_ids: tuple[str, ...]

    def __eq__(self, other):
        if isinstance(other, str):
            return self.effect == other
        if isinstance(other, Verdict):
            return (self.effect, self.matched_rule_ids) == (other.effect, other.matched_rule_ids)
        return NotImplemented

    def __hash__(self):
        return hash((self.effect, self.matched_rule_ids))


def validate_rules(rules: Sequence[PolicyRule]) -> None:
    seen = set()
    for r in rules:
        if r.rule_id in seen:
            raise RuleSyntaxError(f"duplicate rule id {r.rule_id}")
        seen.add(r.rule_id)


def _term_matches(want, got, is_type_object: bool, ontology: Ontology | None) -> bool:
    if want is None:
        return True
    if want == got:
        return True
    if is_type_object and ontology is not None and not isinstance(got, Literal):
        return want in ontology.superclasses(got)
    return False


def pattern_matches(pattern, triple: Triple, ontology: Ontology | None = None) -> bool:
    s, p, o = pattern
    if not _term_matches(s, triple.s, False, None):
        return False
    if not _term_matches(p, triple.p, False, None):
        return False
    return _term_matches(o, triple.o, triple.p == RDF_TYPE, ontology)


def rule_fires(rule: PolicyRule, request_triples: Sequence[Triple], context: ContextSnapshot,
               ontology: Ontology | None = None) -> bool:
    if not all(a.holds(context) for a in rule.conditions):
        return False
    return any(pattern_matches(rule.pattern, t, ontology) for t in request_triples)


def evaluate_policy(rules: Sequence[PolicyRule], request_triples: Sequence[Triple],
                    context: ContextSnapshot, ontology: Ontology | None = None) -> Verdict:
    """Highest priority firing rule wins; ties go deny > step_up > allow, then lowest id."""
    best = None
    best_key = None
    fired = []
    for rule in rules:
        if not rule_fires(rule, request_triples, context, ontology):
            continue
        fired.append(rule.rule_id)
        key = (-rule.priority, EFFECT_RANK[rule.effect], rule.rule_id)
        if best_key is None or key < best_key:
            best, best_key = rule, key
    if best is None:
        return Verdict("deny", ())
    return Verdict(best.effect, tuple(sorted(fired)))


# ---------------------------------------------------------------------------
# text format

_RULE_RE = re.compile(
    r"^rule\s+(?P<id>\S+)\s+(?P<prio>\d+)\s+(?P<effect>\S+)\s+"
    r"pattern\((?P<s>[^,()\s]+),(?P<p>[^,()\s]+),(?P<o>[^,()\s]+)\)"
    r"(?:\s+when\s+(?P<when>\S+))?\s*$"
)
_ATOM_RE = re.compile(r"^(sim_time|threat_level|location_zone|tier)(<=|>=|!=|=|<|>)(\S+)$")


def parse_atom(text: str) -> Atom:
    m = _ATOM_RE.match(text)
    if not m:
        raise RuleSyntaxError(f"bad condition atom {text!r}")
    return Atom(m.group(1), m.group(2), m.group(3))


def parse_policy_text(text: str) -> tuple[Ontology, list[PolicyRule]]:
    ont = Ontology()
    rules: list[PolicyRule] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split()[0]
        parts = line.split()
        try:
            if head == "class" and len(parts) == 2:
                ont.add_class(parts[1])
            elif head == "subclass" and len(parts) == 3:
                ont.add_subclass(parts[1], parts[2])
            elif head == "pred" and len(parts) == 4:
                ont.add_predicate(parts[1], parts[2], parts[3])
            elif head == "rule":
                m = _RULE_RE.match(line)
                if not m:
                    raise RuleSyntaxError("malformed rule")
                atoms = ()
                if m.group("when"):
                    atoms = tuple(parse_atom(a) for a in m.group("when").split(","))
                rules.append(PolicyRule(m.group("id"), (m.group("s"), m.group("p"), m.group("o")),
                                        atoms, m.group("effect"), int(m.group("prio"))))
            else:
                raise RuleSyntaxError(f"unrecognised statement {head!r}")
        except RuleSyntaxError as exc:
            raise RuleSyntaxError(f"line {lineno}: {exc}") from None
    validate_rules(rules)
    return ont, rules


def load_policy(path: str | None = None) -> tuple[Ontology, list[PolicyRule]]:
    if path in (None, "default"):
        text = resources.files("iotsec.data").joinpath("policy.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return parse_policy_text(text)


def request_triples(request_id: str, kind: str, device_id: str, role: str) -> list[Triple]:
    """Access request described as triples for rule matching."""
    return [
        Triple(request_id, RDF_TYPE, kind),
        Triple(request_id, "requestedBy", device_id),
        Triple(request_id, "issuerRole", role),
    ]
