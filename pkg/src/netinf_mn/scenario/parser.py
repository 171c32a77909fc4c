"""Line-oriented scenario language.

A file is a run of sections, each opened by a bare keyword line, in this
order: ``topology``, ``nodes``, ``sessions`` (optional), ``actions``
(optional), ``params`` (optional). ``#`` starts a comment. See
``docs/scenario-grammar.md`` for the EBNF.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Union

from netinf_mn.sim import CORE

SECTIONS = ("topology", "nodes", "sessions", "actions", "params")
POLICIES = ("lazy", "eager")
MAX_SEND_BYTES = 0xFFFF

_NAME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_.\-]*$")
_TOKEN_RE = re.compile(r"\S+")


class ParseError(Exception):
    def __init__(self, line: int, column: int, expected: str, found: Optional[str] = None):
        self.line = line
        self.column = column
        self.expected = expected
        self.found = found
        where = f"line {line}, column {column}"
        got = f", found {found!r}" if found is not None else ""
        super().__init__(f"{where}: expected {expected}{got}")


# -- scenario model --------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeNetwork:
    name: str
    parents: tuple[str, ...] = ()


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    latency: Optional[int] = None
    loss: Optional[float] = None


@dataclass(frozen=True)
class SiteSpec:
    prefix: str
    netinf: bool


@dataclass(frozen=True)
class NodeSpec:
    label: str
    home: str
    vnl_capable: bool = True


@dataclass(frozen=True)
class SessionSpec:
    sid: str
    a: str
    b: str
    at: int = 0


@dataclass(frozen=True)
class Move:
    at: int
    node: str
    to_en: str
    travel: int
    delegate: bool = False
    expect_peer: bool = False


@dataclass(frozen=True)
class SendAction:
    at: int
    node: str
    sid: str
    size: int
    repeat: int = 1
    every: int = 1


@dataclass(frozen=True)
class EgressAction:
    at: int
    node: str
    dst: str
    size: int


@dataclass(frozen=True)
class SetAction:
    at: int
    param: str
    value: int


Action = Union[Move, SendAction, EgressAction, SetAction]


@dataclass(frozen=True)
class Params:
    cache_ttl: int = 100
    lookup_ttl: int = 50
    resume_timeout: int = 30
    mtu: int = 1500
    rtx_interval: int = 20
    rtx_max: int = 5
    handshake_timeout: int = 5
    seed: Optional[int] = None
    until: Optional[int] = None
    policy: str = "lazy"


# parameters a running scenario may change with ``set``
SETTABLE = ("cache_ttl", "lookup_ttl", "resume_timeout", "mtu", "rtx_interval", "rtx_max", "handshake_timeout")
_PARAM_MIN = {
    "cache_ttl": 1,
    "lookup_ttl": 1,
    "resume_timeout": 1,
    "mtu": 37,
    "rtx_interval": 1,
    "rtx_max": 1,
    "handshake_timeout": 1,
    "seed": 0,
    "until": 0,
}


@dataclass(frozen=True)
class Scenario:
    edge_networks: tuple[EdgeNetwork, ...]
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...] = ()
    sites: tuple[SiteSpec, ...] = ()
    sessions: tuple[SessionSpec, ...] = ()
    actions: tuple[Action, ...] = ()
    params: Params = field(default_factory=Params)

    def en_names(self) -> list[str]:
        return [e.name for e in self.edge_networks]

    def node(self, label: str) -> NodeSpec:
        for n in self.nodes:
            if n.label == label:
                return n
        raise KeyError(label)


# -- tokenizer -------------------------------------------------------------------------------

@dataclass(frozen=True)
class _Tok:
    text: str
    line: int
    col: int


class _Line:
    def __init__(self, toks: list[_Tok], line: int, end_col: int):
        self.toks = toks
        self.line = line
        self.end_col = end_col
        self.i = 0

    def _fail(self, expected: str) -> ParseError:
        if self.i < len(self.toks):
            t = self.toks[self.i]
            return ParseError(t.line, t.col, expected, t.text)
        return ParseError(self.line, self.end_col, expected, None)

    def peek(self) -> Optional[str]:
        return self.toks[self.i].text if self.i < len(self.toks) else None

    def take(self, expected: str) -> _Tok:
        if self.i >= len(self.toks):
            raise self._fail(expected)
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def keyword(self, word: str) -> None:
        if self.peek() != word:
            raise self._fail(f"`{word}`")
        self.i += 1

    def optional(self, word: str) -> bool:
        if self.peek() == word:
            self.i += 1
            return True
        return False

    def name(self, what: str) -> _Tok:
        tok = self.take(what)
        if not _NAME_RE.match(tok.text):
            self.i -= 1
            raise self._fail(what)
        return tok

    def integer(self, what: str, minimum: int = 0) -> int:
        tok = self.take(what)
        try:
            value = int(tok.text, 10)
            if not re.fullmatch(r"-?\d+", tok.text):
                raise ValueError
        except ValueError:
            raise ParseError(tok.line, tok.col, what, tok.text) from None
        if value < minimum:
            raise ParseError(tok.line, tok.col, f"{what} >= {minimum}", tok.text)
        return value

    def probability(self, what: str) -> float:
        tok = self.take(what)
        try:
            value = float(tok.text)
        except ValueError:
            raise ParseError(tok.line, tok.col, what, tok.text) from None
        if not 0.0 <= value <= 1.0:
            raise ParseError(tok.line, tok.col, f"{what} in [0, 1]", tok.text)
        return value

    def end(self) -> None:
        if self.i < len(self.toks):
            raise self._fail("end of line")


def _lines(text: str) -> list[_Line]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        toks = [_Tok(m.group(), lineno, m.start() + 1) for m in _TOKEN_RE.finditer(body)]
        if toks:
            out.append(_Line(toks, lineno, len(body.rstrip()) + 1))
    return out


# -- parser --------------------------------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.lines = _lines(text)
        self.pos = 0
        self.ens: dict[str, EdgeNetwork] = {}
        self.links: list[LinkSpec] = []
        self.sites: list[SiteSpec] = []
        self.nodes: dict[str, NodeSpec] = {}
        self.sessions: dict[str, SessionSpec] = {}
        self.actions: list[Action] = []
        self.params = Params()
        self._param_seen: set[str] = set()
        self._action_lines: list[int] = []
        self._text_end = (max((ln.line for ln in self.lines), default=0) + 1) if self.lines else 1

    # section plumbing

    def _at_header(self, names: tuple[str, ...]) -> Optional[str]:
        if self.pos >= len(self.lines):
            return None
        ln = self.lines[self.pos]
        if len(ln.toks) == 1 and ln.toks[0].text in names:
            return ln.toks[0].text
        return None

    def _expect_header(self, name: str) -> None:
        if self.pos >= len(self.lines):
            raise ParseError(self._text_end if self.lines else 1, 1, f"`{name}`")
        ln = self.lines[self.pos]
        if ln.toks[0].text != name:
            raise ParseError(ln.line, ln.toks[0].col, f"`{name}`", ln.toks[0].text)
        ln.i = 1
        ln.end()
        self.pos += 1

    def _section_body(self, later: tuple[str, ...]):
        while self.pos < len(self.lines) and self._at_header(later) is None:
            ln = self.lines[self.pos]
            self.pos += 1
            yield ln

    def parse(self) -> Scenario:
        self._expect_header("topology")
        for ln in self._section_body(SECTIONS[1:]):
            self._topology_line(ln)
        if not self.ens:
            raise ParseError(self._next_line_no(), 1, "at least one `en` declaration")
        self._expect_header("nodes")
        for ln in self._section_body(SECTIONS[2:]):
            self._node_line(ln)
        for idx, name in enumerate(SECTIONS[2:], start=2):
            if self._at_header((name,)):
                self.pos += 1
                handler = {"sessions": self._session_line, "actions": self._action_line, "params": self._param_line}
                for ln in self._section_body(SECTIONS[idx + 1:]):
                    handler[name](ln)
        if self.pos < len(self.lines):
            ln = self.lines[self.pos]
            raise ParseError(ln.line, ln.toks[0].col, "section keyword in order " + ", ".join(SECTIONS[2:]),
                             ln.toks[0].text)
        self._check_timeline()
        return Scenario(
            edge_networks=tuple(self.ens.values()),
            nodes=tuple(self.nodes.values()),
            links=tuple(self.links),
            sites=tuple(self.sites),
            sessions=tuple(self.sessions.values()),
            actions=tuple(self.actions),
            params=self.params,
        )

    def _next_line_no(self) -> int:
        return self.lines[self.pos].line if self.pos < len(self.lines) else self._text_end

    # label checks

    def _en(self, ln: _Line, allow_core: bool = False) -> str:
        tok = ln.name("edge network name")
        if tok.text in self.ens or (allow_core and tok.text == CORE):
            return tok.text
        raise ParseError(tok.line, tok.col, "declared edge network", tok.text)

    def _known_node(self, ln: _Line) -> str:
        tok = ln.name("node label")
        if tok.text not in self.nodes:
            raise ParseError(tok.line, tok.col, "declared node", tok.text)
        return tok.text

    # section lines

    def _topology_line(self, ln: _Line) -> None:
        kw = ln.peek()
        if kw == "en":
            ln.i += 1
            tok = ln.name("edge network name")
            if tok.text in self.ens or tok.text == CORE:
                raise ParseError(tok.line, tok.col, "new edge network name", tok.text)
            parents: list[str] = []
            if ln.optional("under"):
                parents.append(self._en(ln))
                while ln.peek() is not None:
                    parents.append(self._en(ln))
            ln.end()
            self.ens[tok.text] = EdgeNetwork(tok.text, tuple(parents))
        elif kw == "link":
            ln.i += 1
            a = self._en(ln, allow_core=True)
            b = self._en(ln, allow_core=True)
            latency = loss = None
            if ln.optional("latency"):
                latency = ln.integer("latency in ticks", 1)
            if ln.optional("loss"):
                ptok = ln.toks[ln.i] if ln.i < len(ln.toks) else None
                loss = ln.probability("loss probability")
                # local attach traffic is never retried, so it must not be dropped
                if a == b and a != CORE and loss > 0:
                    raise ParseError(ptok.line, ptok.col, "loss 0 on a link inside one edge network", ptok.text)
            ln.end()
            self.links.append(LinkSpec(a, b, latency, loss))
        elif kw == "site":
            ln.i += 1
            prefix = ln.take("destination prefix").text
            mode = ln.take("`netinf` or `legacy`")
            if mode.text not in ("netinf", "legacy"):
                raise ParseError(mode.line, mode.col, "`netinf` or `legacy`", mode.text)
            ln.end()
            self.sites.append(SiteSpec(prefix, mode.text == "netinf"))
        else:
            raise ln._fail("`en`, `link`, `site` or `nodes`")

    def _node_line(self, ln: _Line) -> None:
        ln.keyword("node")
        tok = ln.name("node label")
        if tok.text in self.nodes or tok.text in self.ens:
            raise ParseError(tok.line, tok.col, "new node label", tok.text)
        ln.keyword("home")
        home = self._en(ln)
        capable = True
        if ln.optional("vnl"):
            flag = ln.take("`yes` or `no`")
            if flag.text not in ("yes", "no"):
                raise ParseError(flag.line, flag.col, "`yes` or `no`", flag.text)
            capable = flag.text == "yes"
        ln.end()
        self.nodes[tok.text] = NodeSpec(tok.text, home, capable)

    def _session_line(self, ln: _Line) -> None:
        ln.keyword("session")
        tok = ln.name("session id")
        if tok.text in self.sessions:
            raise ParseError(tok.line, tok.col, "new session id", tok.text)
        a = self._known_node(ln)
        btok = ln.toks[ln.i] if ln.i < len(ln.toks) else None
        b = self._known_node(ln)
        if a == b:
            raise ParseError(btok.line, btok.col, "a second, different node", b)
        at = ln.integer("start tick", 0) if ln.optional("at") else 0
        ln.end()
        self.sessions[tok.text] = SessionSpec(tok.text, a, b, at)

    def _action_line(self, ln: _Line) -> None:
        self._action_lines.append(ln.line)
        ln.keyword("at")
        at = ln.integer("action tick", 0)
        verb = ln.take("`move`, `send`, `egress` or `set`")
        if verb.text == "move":
            node = self._known_node(ln)
            ln.keyword("->")
            to_en = self._en(ln)
            ln.keyword("travel")
            travel = ln.integer("travel ticks", 1)
            delegate = expect = False
            while ln.peek() in ("delegate", "expect-peer"):
                flag = ln.take("flag").text
                if flag == "delegate":
                    delegate = True
                else:
                    expect = True
            ln.end()
            self.actions.append(Move(at, node, to_en, travel, delegate, expect))
        elif verb.text == "send":
            node = self._known_node(ln)
            stok = ln.name("session id")
            sess = self.sessions.get(stok.text)
            if sess is None:
                raise ParseError(stok.line, stok.col, "declared session", stok.text)
            if node not in (sess.a, sess.b):
                raise ParseError(stok.line, stok.col, f"a session of {node}", stok.text)
            if at < sess.at:
                raise ParseError(stok.line, stok.col, f"session already open at tick {at}", stok.text)
            size = ln.integer("payload size", 0)
            if size > MAX_SEND_BYTES:
                raise ParseError(ln.line, ln.toks[ln.i - 1].col, f"payload size <= {MAX_SEND_BYTES}", str(size))
            repeat, every = 1, 1
            if ln.optional("repeat"):
                repeat = ln.integer("repeat count", 1)
                ln.keyword("every")
                every = ln.integer("interval ticks", 1)
            ln.end()
            self.actions.append(SendAction(at, node, stok.text, size, repeat, every))
        elif verb.text == "egress":
            node = self._known_node(ln)
            dst = ln.take("destination address").text
            size = ln.integer("payload size", 0)
            if size > MAX_SEND_BYTES:
                raise ParseError(ln.line, ln.toks[ln.i - 1].col, f"payload size <= {MAX_SEND_BYTES}", str(size))
            ln.end()
            self.actions.append(EgressAction(at, node, dst, size))
        elif verb.text == "set":
            ptok = ln.take("settable parameter")
            if ptok.text not in SETTABLE:
                raise ParseError(ptok.line, ptok.col, "one of " + ", ".join(SETTABLE), ptok.text)
            value = ln.integer(f"value for {ptok.text}", _PARAM_MIN[ptok.text])
            ln.end()
            self.actions.append(SetAction(at, ptok.text, value))
        else:
            raise ParseError(verb.line, verb.col, "`move`, `send`, `egress` or `set`", verb.text)

    def _param_line(self, ln: _Line) -> None:
        ptok = ln.take("parameter name")
        names = [f.name for f in fields(Params)]
        if ptok.text not in names:
            raise ParseError(ptok.line, ptok.col, "one of " + ", ".join(names), ptok.text)
        if ptok.text in self._param_seen:
            raise ParseError(ptok.line, ptok.col, "parameter not already set", ptok.text)
        self._param_seen.add(ptok.text)
        if ptok.text == "policy":
            vtok = ln.take("`lazy` or `eager`")
            if vtok.text not in POLICIES:
                raise ParseError(vtok.line, vtok.col, "`lazy` or `eager`", vtok.text)
            value: object = vtok.text
        else:
            value = ln.integer(f"value for {ptok.text}", _PARAM_MIN[ptok.text])
        ln.end()
        self.params = replace(self.params, **{ptok.text: value})

    def _check_timeline(self) -> None:
        # a node cannot start a new move while the previous one is still in the air
        busy_until: dict[str, int] = {}
        moves = [(a, line) for a, line in zip(self.actions, self._action_lines) if isinstance(a, Move)]
        for act, line in sorted(moves, key=lambda m: m[0].at):
            if act.at < busy_until.get(act.node, 0):
                raise ParseError(line, 1, f"move of {act.node} at or after tick {busy_until[act.node]}", str(act.at))
            busy_until[act.node] = act.at + act.travel


def parse_scenario(text: str) -> Scenario:
    return _Parser(text).parse()


# -- rendering -------------------------------------------------------------------------------------

def _fmt_loss(p: float) -> str:
    return repr(float(p))


def render_scenario(sc: Scenario, include_params: bool = True) -> str:
    out = ["topology"]
    for en in sc.edge_networks:
        out.append(f"  en {en.name}" + (f" under {' '.join(en.parents)}" if en.parents else ""))
    for ln in sc.links:
        line = f"  link {ln.a} {ln.b}"
        if ln.latency is not None:
            line += f" latency {ln.latency}"
        if ln.loss is not None:
            line += f" loss {_fmt_loss(ln.loss)}"
        out.append(line)
    for s in sc.sites:
        out.append(f"  site {s.prefix} {'netinf' if s.netinf else 'legacy'}")
    out.append("nodes")
    for n in sc.nodes:
        out.append(f"  node {n.label} home {n.home}" + ("" if n.vnl_capable else " vnl no"))
    if sc.sessions:
        out.append("sessions")
        for s in sc.sessions:
            out.append(f"  session {s.sid} {s.a} {s.b}" + (f" at {s.at}" if s.at else ""))
    if sc.actions:
        out.append("actions")
        for a in sc.actions:
            out.append("  " + _render_action(a))
    if include_params:
        defaults = Params()
        changed = [(f.name, getattr(sc.params, f.name)) for f in fields(Params)
                   if getattr(sc.params, f.name) != getattr(defaults, f.name)]
        if changed:
            out.append("params")
            out.extend(f"  {k} {v}" for k, v in changed)
    return "\n".join(out) + "\n"


def _render_action(a: Action) -> str:
    if isinstance(a, Move):
        flags = (" delegate" if a.delegate else "") + (" expect-peer" if a.expect_peer else "")
        return f"at {a.at} move {a.node} -> {a.to_en} travel {a.travel}{flags}"
    if isinstance(a, SendAction):
        rep = f" repeat {a.repeat} every {a.every}" if a.repeat != 1 or a.every != 1 else ""
        return f"at {a.at} send {a.node} {a.sid} {a.size}{rep}"
    if isinstance(a, EgressAction):
        return f"at {a.at} egress {a.node} {a.dst} {a.size}"
    return f"at {a.at} set {a.param} {a.value}"
