import pytest

from brts.interp import (
    BoolV, IndexedV, IntV, Interp, NULL, ObjV, RuntimeErr, Store, StrV, UNIT,
    default, run_program,
)
from brts.parser import parse_program
from brts import syntax as ast
from brts.syntax import (
    BOOL, INT, STRING, VOID, InstanceType, PermPair, StateRef, state_table,
)

from test_typecheck import BUFFER_STATES, GOOD_MAIN, VIOLATING_MAIN


def run_src(src: str, **kw):
    return run_program(parse_program(src), **kw)


# ---------------------------------------------------------------------------
# defaults
# ---------------------------------------------------------------------------

def test_default_int():
    assert default(INT) == IntV(0)


def test_default_bool():
    assert default(BOOL) == BoolV(False)


def test_default_string_and_void():
    assert default(STRING) == StrV("")
    assert default(VOID) == UNIT


def test_default_state_is_null():
    assert default(StateRef("S")) == NULL
    assert default(PermPair(1, StateRef("S"))) == NULL


def test_no_default_for_change_types():
    from brts.syntax import ChangeType
    with pytest.raises(RuntimeErr) as err:
        default(ChangeType(INT, INT))
    assert err.value.kind == "NoDefault"


# ---------------------------------------------------------------------------
# core rules
# ---------------------------------------------------------------------------

def test_eval_constant():
    st = state_table(parse_program("state M { void main()[] { } }"))
    interp = Interp(st)
    value, _ = interp.eval(Store(), ast.IntLit(5))
    assert value == IntV(5)


def test_null_dereference():
    src = """
state S { var int f; }
state Main {
    void main()[] {
        var (1, S) x = new S();
        var (1, S) y = x;
        let q = y.f in q;
    }
}
"""
    # make y start as the default null instead
    src = src.replace("var (1, S) y = x;", "val bool d = true;").replace(
        "let q = y.f in q;", "let q = x.f in q;")
    value, _, _ = run_src(src)
    assert value == IntV(0)

    null_src = """
state S { var int f; }
state Main {
    void main()[] {
        var int unused = 0;
        f_of_null();
    }
    void f_of_null()[] { }
}
"""
    # direct construction: field access through an explicitly null binding
    prog = parse_program("""
state S { var int f; }
state Main { void main()[] { } }
""")
    st = state_table(prog)
    interp = Interp(st)
    store = Store()
    store.bind("x", NULL)
    with pytest.raises(RuntimeErr) as err:
        interp.eval(store, ast.FieldRef(ast.VarRef("x"), "f"))
    assert err.value.kind == "NullDereference"


def test_good_prodcons_trace_matches_expected_counts():
    value, interp, _ = run_src(BUFFER_STATES + GOOD_MAIN, trace=True)
    coords = [t.detail["coords"] for t in interp.trace
              if t.rule == "mcall" and t.detail.get("coords") is not None
              and t.detail.get("depth") == 0]
    assert coords == [[0, 0], [1, 0], [2, 0], [2, 1], [2, 2]]


def test_violating_prodcons_reaches_2_3_unchecked():
    value, interp, _ = run_src(BUFFER_STATES + VIOLATING_MAIN, trace=True)
    coords = [t.detail["coords"] for t in interp.trace
              if t.rule == "mcall" and t.detail.get("coords") is not None
              and t.detail.get("depth") == 0]
    assert coords[-1] == [2, 3]


def test_object_state_transitions_via_trusted_signature():
    src = BUFFER_STATES + """
state Main {
    void main()[] {
        var (1, SB(phi(0, 0), ClosedBuffer)) buffer = new ClosedBuffer();
        var (1, _) pc = new ProducerConsumer();
        pc.open(buffer);
        buffer;
    }
}
"""
    value, _, _ = run_src(src)
    assert isinstance(value, ObjV)
    assert value.state == "OpenBuffer"
    assert value.coords == (0, 0)


def test_fuel_exhaustion():
    src = """
state Main {
    void main()[] {
        var bool go = true;
        while [exists. 0 <= 0] (go) { };
    }
}
"""
    with pytest.raises(RuntimeErr) as err:
        run_src(src, fuel=50)
    assert err.value.kind == "FuelExhausted"


def test_while_runs_body_until_condition_flips():
    src = """
state Main {
    void main()[] {
        var bool go = true;
        var int seen = 0;
        while [exists. 0 <= 0] (go) {
            seen <- 1;
            go <- false;
        };
        seen;
    }
}
"""
    value, _, _ = run_src(src)
    assert value == IntV(1)


def test_no_matching_arm():
    src = """
state A { }
state B { }
state Main {
    void main()[] {
        var (1, A) x = new A();
        match (x : A) {
            case A { x; }
        };
    }
}
"""
    value, _, _ = run_src(src)
    assert isinstance(value, ObjV)

    bad = src.replace("case A { x; }", "case B { x; }").replace("(x : A)", "(x)")
    with pytest.raises(RuntimeErr) as err:
        run_src(bad)
    assert err.value.kind == "NoMatchingArm"


def test_match_concrete_picks_first_covering_arm():
    src = BUFFER_STATES + """
state Main {
    void main()[] {
        var (1, SB(phi(0, 0), ClosedBuffer)) buffer = new ClosedBuffer();
        match (buffer) {
            case OpenBuffer { 1; }
            case ClosedBuffer { 2; }
            default { 3; }
        };
    }
}
"""
    value, _, _ = run_src(src)
    assert value == IntV(2)


def test_match_abstract_joins_results():
    src = BUFFER_STATES + """
state Main {
    void main()[] {
        var (1, SB(phi(0, 0), ClosedBuffer)) buffer = new ClosedBuffer();
        match (buffer : Buffer) {
            case ClosedBuffer { 2; }
            default { 3; }
        };
    }
}
"""
    value, _, _ = run_src(src, mode="abstract")
    assert isinstance(value, IndexedV)
    assert set(value.options) == {IntV(2), IntV(3)}


def test_concrete_abstract_agree_on_unique_arm():
    src = BUFFER_STATES + """
state Main {
    void main()[] {
        var (1, SB(phi(0, 0), ClosedBuffer)) buffer = new ClosedBuffer();
        match (buffer) {
            case ClosedBuffer { 7; }
        };
    }
}
"""
    concrete, _, _ = run_src(src, mode="concrete")
    abstract, _, _ = run_src(src, mode="abstract")
    assert concrete == abstract == IntV(7)


def test_store_update_rebinds_without_removing():
    src = """
state A { }
state B { }
state Main {
    void main()[] {
        var (1, A) x = new A();
        var int y = 1;
        x <- new B();
        y;
    }
}
"""
    value, _, store = run_src(src)
    assert value == IntV(1)
    assert isinstance(store.lookup("x"), ObjV)
    assert store.lookup("x").state == "B"
    assert store.lookup("y") == IntV(1)


def test_update_preserves_counters_on_plain_retag():
    src = BUFFER_STATES + """
state Main {
    void main()[] {
        var (1, SB(phi(3, 1), ClosedBuffer)) buffer = new ClosedBuffer();
        buffer <- new OpenBuffer();
        buffer;
    }
}
"""
    value, _, _ = run_src(src)
    assert value.state == "OpenBuffer"
    assert value.coords == (3, 1)


def test_field_assignment_and_read():
    src = """
state Box { var int size; }
state Main {
    void main()[] {
        var (1, Box) b = new Box();
        let b.size = 9 in b.size;
    }
}
"""
    value, _, _ = run_src(src)
    assert value == IntV(9)


def test_method_call_frame_restored():
    src = """
state Helper {
    int pick((1, Helper) >> (1, Helper) w)[] { 42; }
}
state Main {
    void main()[] {
        var (1, Helper) w = new Helper();
        var (1, Helper) h = new Helper();
        let r = h.pick(w) in r;
    }
}
"""
    value, _, store = run_src(src)
    assert value == IntV(42)
    # the callee's 'this' binding did not leak over main's
    assert store.lookup("this").state == "Main"
