"""Big-step evaluator over program stores.

The store pairs a reference map (objects and locations) with a value map.
Objects created at a dependent typestate carry their coordinate valuation;
signature-driven transitions rewrite those coordinates at runtime, which is
what the trace tooling reads back out.

Two match semantics are provided: concrete mode picks the first arm whose
guard state covers the scrutinee's tag, abstract mode evaluates every arm
and joins the results into an indexed value with a merged store.  Loops
iterate in concrete mode; abstract mode takes the body once, standing in
for the fixpoint the checked invariant witnesses.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

from .diagnostics import NO_SPAN, Span
from .presburger import Lin
from . import syntax as ast
from .syntax import (
    BOOL, INT, STRING, VOID,
    ChangeType, InstanceType, PermPair, PrimType, StateRef, StateTable, Type,
    WildcardType, find_method_decl, mtype, state_table,
)


class RuntimeErr(Exception):
    def __init__(self, kind: str, message: str, span: Span = NO_SPAN):
        super().__init__(message)
        self.kind = kind
        self.span = span


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------

class Value:
    __slots__ = ()


@dataclass(frozen=True)
class IntV(Value):
    value: int


@dataclass(frozen=True)
class BoolV(Value):
    value: bool


@dataclass(frozen=True)
class StrV(Value):
    value: str


@dataclass(frozen=True)
class UnitV(Value):
    pass


UNIT = UnitV()


@dataclass(frozen=True)
class Loc(Value):
    """An abstract location; location 0 is null."""
    index: int

    @property
    def is_null(self) -> bool:
        return self.index == 0


NULL = Loc(0)


@dataclass(frozen=True)
class ObjV(Value):
    """An object value tagged with its current state.

    coords carries the runtime counter valuation for dependently created
    objects (None otherwise); family names the type family those counters
    instantiate.
    """
    state: str
    fields: tuple[tuple[str, Value], ...]
    coords: Optional[tuple[int, ...]] = None
    family: Optional[str] = None
    loc: int = 0

    def field_value(self, name: str) -> Optional[Value]:
        for k, v in self.fields:
            if k == name:
                return v
        return None

    def with_field(self, name: str, value: Value) -> "ObjV":
        out = tuple((k, value if k == name else v) for k, v in self.fields)
        return replace(self, fields=out)


@dataclass(frozen=True)
class IndexedV(Value):
    """Join of the values the arms of an abstract match produced."""
    options: tuple[Value, ...]


def join_values(a: Value, b: Value) -> Value:
    if a == b:
        return a
    opts: list[Value] = []
    for v in (a, b):
        if isinstance(v, IndexedV):
            opts.extend(v.options)
        else:
            opts.append(v)
    seen: list[Value] = []
    for v in opts:
        if v not in seen:
            seen.append(v)
    return seen[0] if len(seen) == 1 else IndexedV(tuple(seen))


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

class Store:
    """Reference-variable and value-variable maps plus a location counter."""

    def __init__(self) -> None:
        self.theta: dict[str | int, Value] = {}
        self.delta: dict[str, Value] = {}
        self._next_loc = 1

    def fresh_loc(self) -> int:
        loc = self._next_loc
        self._next_loc += 1
        return loc

    def copy(self) -> "Store":
        out = Store()
        out.theta = dict(self.theta)
        out.delta = dict(self.delta)
        out._next_loc = self._next_loc
        return out

    def bind(self, name: str, value: Value) -> None:
        if isinstance(value, (ObjV, Loc, IndexedV)):
            self.theta[name] = value
        else:
            self.delta[name] = value

    def lookup(self, name: str) -> Optional[Value]:
        if name in self.delta:
            return self.delta[name]
        return self.theta.get(name)

    def names(self) -> set[str]:
        return {k for k in self.theta if isinstance(k, str)} | set(self.delta)

    def join(self, other: "Store") -> "Store":
        out = self.copy()
        for k, v in other.theta.items():
            out.theta[k] = join_values(out.theta[k], v) if k in out.theta else v
        for k, v in other.delta.items():
            out.delta[k] = join_values(out.delta[k], v) if k in out.delta else v
        out._next_loc = max(self._next_loc, other._next_loc)
        return out


def default(ty: Type) -> Value:
    """Initial value of a declared type."""
    match ty:
        case PrimType("int"):
            return IntV(0)
        case PrimType("bool"):
            return BoolV(False)
        case PrimType("string"):
            return StrV("")
        case PrimType("void"):
            return UNIT
        case StateRef() | InstanceType() | WildcardType():
            return NULL
        case PermPair(_, inner):
            return default(inner)
    raise RuntimeErr("NoDefault", f"no default value for type {ty!r}")


# ---------------------------------------------------------------------------
# Interpreter
# ---------------------------------------------------------------------------

@dataclass
class TraceEntry:
    rule: str
    span: Span
    detail: dict

    def to_json(self) -> dict:
        out = {"rule": self.rule, "line": self.span.line, "col": self.span.col}
        out.update(self.detail)
        return out


class Interp:
    def __init__(self, table: StateTable, mode: str = "concrete",
                 fuel: int = 10 ** 6, trace: bool = False):
        assert mode in ("concrete", "abstract")
        self.st = table
        self.mode = mode
        self.fuel = fuel
        self.tracing = trace
        self.trace: list[TraceEntry] = []
        # signature variables of the innermost call, for typestate literals
        self._sigma_stack: list[dict[str, int]] = [{}]

    # -- helpers -------------------------------------------------------------

    def _spend(self, span: Span) -> None:
        self.fuel -= 1
        if self.fuel < 0:
            raise RuntimeErr("FuelExhausted", "evaluation step budget exhausted", span)

    def _emit(self, rule: str, span: Span, **detail) -> None:
        if self.tracing:
            self.trace.append(TraceEntry(rule, span, detail))

    @property
    def _sigma(self) -> dict[str, int]:
        return self._sigma_stack[-1]

    def _eval_term(self, term, span: Span) -> int:
        lin = Lin.of(term)
        env = {}
        for v in lin.variables():
            if v not in self._sigma:
                raise RuntimeErr("UnboundRuntimeName",
                                 f"logical variable '{v}' has no runtime value", span)
            env[v] = self._sigma[v]
        return lin.evaluate(env)

    def _new_object(self, state: str, inst: Optional[InstanceType],
                    store: Store, span: Span) -> ObjV:
        fields: list[tuple[str, Value]] = []
        for anc in reversed(self.st.ancestors(state)):
            for fd in self.st.states[anc].fields.values():
                fields.append((fd.name, default(fd.type)))
        coords = None
        family = None
        if inst is not None and inst.args:
            coords = tuple(self._eval_term(a, span) for a in inst.args)
            family = inst.family
        obj = ObjV(state, tuple(fields), coords, family, store.fresh_loc())
        store.theta[obj.loc] = obj
        return obj

    # -- evaluation ------------------------------------------------------------

    def eval(self, store: Store, e: ast.Expr) -> tuple[Value, Store]:
        self._spend(getattr(e, "span", NO_SPAN))
        match e:
            case ast.IntLit(v):
                self._emit("const", e.span)
                return IntV(v), store
            case ast.BoolLit(v):
                self._emit("const", e.span)
                return BoolV(v), store
            case ast.StrLit(v):
                self._emit("const", e.span)
                return StrV(v), store
            case ast.Skip():
                return UNIT, store
            case ast.VarRef(name, span):
                value = store.lookup(name)
                if value is None:
                    raise RuntimeErr("UnboundRuntimeName",
                                     f"'{name}' is not bound at runtime", span)
                self._emit("var", span, name=name)
                return value, store
            case ast.NewObj(state, inst, ctor_args, span):
                for a in ctor_args:
                    _, store = self.eval(store, a)
                obj = self._new_object(state, inst, store, span)
                self._emit("new", span, state=state,
                           coords=list(obj.coords) if obj.coords else None)
                return obj, store
            case ast.TypestateLit(_, inst, span):
                coords = tuple(self._eval_term(a, span) for a in inst.args)
                obj = ObjV(inst.state, (), coords if inst.args else None,
                           inst.family, store.fresh_loc())
                store.theta[obj.loc] = obj
                self._emit("typestate", span, state=inst.state, coords=list(coords))
                return obj, store
            case ast.FieldRef(obj_e, name, span):
                obj, store = self.eval(store, obj_e)
                obj = self._deref(obj, span)
                value = obj.field_value(name)
                if value is None:
                    raise RuntimeErr("UnboundRuntimeName",
                                     f"object has no field '{name}'", span)
                self._emit("de-ref", span, field=name)
                return value, store
            case ast.Seq(first, second):
                _, store = self.eval(store, first)
                return self.eval(store, second)
            case ast.Let(name, declared, init, body, _, span):
                value, store = self.eval(store, init)
                if isinstance(init, ast.NewObj) and declared is not None:
                    value = self._adopt_declared(value, declared, span)
                store.bind(name, value)
                self._emit("let", span, name=name)
                return self.eval(store, body)
            case ast.FieldAssign(target, name, value_e, body, span):
                value, store = self.eval(store, value_e)
                obj = self._deref(self._lookup(store, target, span), span)
                if obj.field_value(name) is None:
                    raise RuntimeErr("UnboundRuntimeName",
                                     f"object has no field '{name}'", span)
                updated = obj.with_field(name, value)
                store.theta[updated.loc] = updated
                store.bind(target, updated)
                self._emit("update-field", span, field=name)
                return self.eval(store, body)
            case ast.Update(target, source, span):
                return self.eval_update(store, target, source, span)
            case ast.MethodCall():
                return self.eval_call(store, e)
            case ast.Match():
                return self.eval_match(store, e)
            case ast.CaseExpr(scrut, body, span):
                _, store = self.eval(store, scrut)
                self._emit("case", span)
                return self.eval(store, body)
            case ast.While():
                return self.eval_while(store, e)
        raise RuntimeErr("UnboundRuntimeName", f"cannot evaluate {e!r}")

    def _lookup(self, store: Store, name: str, span: Span) -> Value:
        value = store.lookup(name)
        if value is None:
            raise RuntimeErr("UnboundRuntimeName",
                             f"'{name}' is not bound at runtime", span)
        return value

    def _deref(self, value: Value, span: Span) -> ObjV:
        if isinstance(value, Loc):
            if value.is_null:
                raise RuntimeErr("NullDereference", "null dereference", span)
            raise RuntimeErr("NullDereference", "dangling location", span)
        if not isinstance(value, ObjV):
            raise RuntimeErr("UnboundRuntimeName",
                             f"expected an object, got {value!r}", span)
        return value

    def _adopt_declared(self, value: Value, declared: Type, span: Span) -> Value:
        """A dependent ascription on a plain new: the creation formula comes
        from the declaration."""
        inst = declared.inner if isinstance(declared, PermPair) else declared
        if isinstance(inst, InstanceType) and inst.args and isinstance(value, ObjV):
            if value.coords is None:
                ground = all(Lin.of(a).is_const for a in inst.args)
                if ground:
                    coords = tuple(Lin.of(a).const for a in inst.args)
                    return replace(value, coords=coords, family=inst.family)
        return value

    def eval_update(self, store: Store, target: ast.Expr, source: ast.Expr,
                    span: Span) -> tuple[Value, Store]:
        src_value, store = self.eval(store, source)
        if not isinstance(target, ast.VarRef):
            raise RuntimeErr("UnboundRuntimeName", "update target must be a variable", span)
        old = store.lookup(target.name)
        new_value = src_value
        if isinstance(src_value, ObjV) and isinstance(old, ObjV):
            # a retag without coordinates keeps the target's counters
            coords = src_value.coords if src_value.coords is not None else old.coords
            family = src_value.family or old.family
            fields = src_value.fields if src_value.fields else old.fields
            new_value = replace(src_value, coords=coords, family=family, fields=fields)
            store.theta[new_value.loc] = new_value
        store.bind(target.name, new_value)
        self._emit("update", span, name=target.name,
                   coords=list(new_value.coords) if isinstance(new_value, ObjV)
                   and new_value.coords else None)
        return new_value, store

    # -- method calls ------------------------------------------------------------

    def eval_call(self, store: Store, e: ast.MethodCall) -> tuple[Value, Store]:
        recv, store = self.eval(store, e.recv)
        recv_obj = self._deref(recv, e.span)
        defined_in, decl = find_method_decl(self.st, e.method, recv_obj.state)

        arg_values: list[Value] = []
        for a in e.args:
            v, store = self.eval(store, a)
            arg_values.append(v)

        # instantiate the signature's logical variables from runtime counters
        sigma: dict[str, int] = {}
        formals = list(decl.params)
        pairs = list(zip(formals, arg_values))
        env_pairs = [(p, recv_obj) for p in decl.env if p.name == "this"]
        for p, v in pairs + env_pairs:
            pre = p.change.pre
            inst = pre.inner if isinstance(pre, PermPair) else pre
            if isinstance(inst, InstanceType) and isinstance(v, ObjV) and v.coords:
                for term, coord in zip(inst.args, v.coords):
                    lin = Lin.of(term)
                    if len(lin.coeffs) == 1 and lin.const == 0:
                        (var, coeff), = lin.coeffs.items()
                        if coeff == 1:
                            sigma.setdefault(var, coord)

        saved = {}
        names = [p.name for p in decl.params] + ["this"]
        for name in names:
            saved[name] = (store.theta.get(name), store.delta.get(name))
        for p, v in zip(decl.params, arg_values):
            store.bind(p.name, v)
        store.bind("this", recv_obj)

        self._sigma_stack.append(sigma)
        try:
            if decl.body is not None:
                result, store = self.eval(store, decl.body)
            else:
                # trusted signature: apply the declared transition directly
                result = UNIT
                for p, v in zip(decl.params, arg_values):
                    nv = self._apply_post(p.change, v, store, e.span)
                    store.bind(p.name, nv)
        finally:
            self._sigma_stack.pop()

        # call-by-value: updated bindings flow back to caller variables
        updated: list[Value] = []
        for p, actual in zip(decl.params, e.args):
            out_v = store.lookup(p.name)
            updated.append(out_v)
        this_out = store.lookup("this")
        if decl.body is None:
            this_env = [p for p in decl.env if p.name == "this"]
            if this_env:
                this_out = self._apply_post(this_env[0].change, recv_obj, store, e.span)

        for name in names:
            th, de = saved[name]
            store.theta.pop(name, None)
            store.delta.pop(name, None)
            if th is not None:
                store.theta[name] = th
            if de is not None:
                store.delta[name] = de

        for actual, out_v in zip(e.args, updated):
            if isinstance(actual, ast.VarRef) and out_v is not None:
                store.bind(actual.name, out_v)
        if isinstance(e.recv, ast.VarRef) and this_out is not None:
            store.bind(e.recv.name, this_out)

        coords = None
        for v in itertools.chain(updated, [this_out]):
            if isinstance(v, ObjV) and v.coords is not None:
                coords = list(v.coords)
        self._emit("mcall", e.span, method=e.method, state=defined_in,
                   coords=coords, depth=len(self._sigma_stack) - 1)
        return result, store

    def _apply_post(self, change: ChangeType, value: Value, store: Store,
                    span: Span) -> Value:
        if not isinstance(value, ObjV):
            return value
        post = change.post
        inst = post.inner if isinstance(post, PermPair) else post
        if isinstance(inst, InstanceType):
            coords = value.coords
            if inst.args and value.coords is not None:
                coords = tuple(self._eval_term(a, span) for a in inst.args)
            out = replace(value, state=inst.state, coords=coords,
                          family=inst.family or value.family)
        elif isinstance(inst, StateRef):
            out = replace(value, state=inst.name)
        else:
            return value
        store.theta[out.loc] = out
        return out

    # -- match -------------------------------------------------------------------

    def eval_match(self, store: Store, e: ast.Match) -> tuple[Value, Store]:
        scrut, store = self.eval(store, e.scrutinee)
        obj = self._deref(scrut, e.span)
        scrut_name = e.scrutinee.name if isinstance(e.scrutinee, ast.VarRef) else None

        if self.mode == "concrete":
            for arm in e.arms:
                if self.st.is_substate(obj.state, arm.state):
                    self._emit("match", arm.span, arm=arm.state)
                    return self.eval(store, arm.body)
            if e.default is not None:
                self._emit("match", e.span, arm="default")
                return self.eval(store, e.default)
            raise RuntimeErr("NoMatchingArm",
                             f"no arm matches state '{obj.state}'", e.span)

        # abstract mode: take every arm the hierarchy allows, join the outcomes
        results: list[Value] = []
        stores: list[Store] = []
        arms = list(e.arms)
        if e.default is not None:
            arms.append(ast.MatchArm(obj.state, e.default, e.span))
        for arm in arms:
            if not self.st.comparable(obj.state, arm.state):
                continue
            branch = store.copy()
            if scrut_name is not None:
                refined = arm.state if self.st.is_substate(arm.state, obj.state) \
                    else obj.state
                branch.bind(scrut_name, replace(obj, state=refined))
            v, out = self.eval(branch, arm.body)
            results.append(v)
            stores.append(out)
        if not results:
            raise RuntimeErr("NoMatchingArm",
                             f"no arm matches state '{obj.state}'", e.span)
        self._emit("match", e.span, arms=len(results), mode="abstract")
        joined_store = stores[0]
        for s in stores[1:]:
            joined_store = joined_store.join(s)
        value = results[0]
        for v in results[1:]:
            value = join_values(value, v)
        return value, joined_store

    # -- while --------------------------------------------------------------------

    def eval_while(self, store: Store, e: ast.While) -> tuple[Value, Store]:
        if self.mode == "abstract":
            cond, store = self.eval(store, e.cond)
            _, store = self.eval(store, e.body)
            self._emit("while", e.span, mode="abstract")
            return UNIT, store
        while True:
            cond, store = self.eval(store, e.cond)
            if not isinstance(cond, BoolV):
                raise RuntimeErr("UnboundRuntimeName",
                                 "loop condition is not a bool", e.span)
            if not cond.value:
                self._emit("while-false", e.span)
                return UNIT, store
            self._emit("while-true", e.span)
            _, store = self.eval(store, e.body)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def run_program(program: ast.Program, mode: str = "concrete",
                fuel: int = 10 ** 6, trace: bool = False,
                table: Optional[StateTable] = None) -> tuple[Value, Interp, Store]:
    """Evaluate the program's main method; returns its value, the
    interpreter (for the trace) and the final store."""
    st = table if table is not None else state_table(program)
    interp = Interp(st, mode=mode, fuel=fuel, trace=trace)
    store = Store()
    main_state = st.main_state
    this = interp._new_object(main_state, None, store, NO_SPAN)
    store.bind("this", this)
    decl = st.states[main_state].methods["main"]
    if decl.body is None:
        return UNIT, interp, store
    value, store = interp.eval(store, decl.body)
    return value, interp, store
