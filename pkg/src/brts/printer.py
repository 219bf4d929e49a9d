"""Pretty-printer for programs; the right inverse of the parser.

Printing then reparsing yields the same tree up to source spans, which is
what the round-trip tests pin down.
"""

from __future__ import annotations

import dataclasses

from .presburger import And, Formula, TRUE, render, render_term
from . import syntax as ast

INDENT = "    "


def print_program(program: ast.Program) -> str:
    return "\n".join(print_state(s, 0) for s in program.states) + "\n"


def print_state(st: ast.StateDecl, depth: int) -> str:
    pad = INDENT * depth
    head = f"{pad}state {st.name}"
    if st.parent:
        head += f" case of {st.parent}"
    if not st.decls:
        return head + " { }"
    lines = [head + " {"]
    for d in st.decls:
        lines.append(print_decl(d, depth + 1))
    lines.append(pad + "}")
    return "\n".join(lines)


def print_decl(d: ast.Decl, depth: int) -> str:
    pad = INDENT * depth
    match d:
        case ast.StateDecl():
            return print_state(d, depth)
        case ast.TypeFamDecl(name, coords, bound):
            return f"{pad}type {name} : Pi(phi({', '.join(coords)}), {bound});"
        case ast.FieldDecl(mutable, ty, name, init):
            kw = "var" if mutable else "val"
            txt = f"{pad}{kw} {print_type(ty)} {name}"
            if init is not None:
                txt += f" = {print_expr(init)}"
            return txt + ";"
        case ast.MethodDecl(ret, name, params, env, body):
            ps = ", ".join(f"{print_type(p.change)} {p.name}" for p in params)
            es = ", ".join(f"{print_type(p.change)} {p.name}" for p in env)
            head = f"{pad}{print_type(ret)} {name}({ps})[{es}]"
            if body is None:
                return head + ";"
            return head + " " + print_block(body, depth)
    raise TypeError(f"not a declaration: {d!r}")


def print_type(ty: ast.Type) -> str:
    match ty:
        case ast.PrimType(name):
            return name
        case ast.StateRef(name):
            return name
        case ast.WildcardType():
            return "_"
        case ast.PermPair(perm, inner):
            return f"({perm}, {print_type(inner)})"
        case ast.ChangeType(pre, post):
            return f"{print_type(pre)} >> {print_type(post)}"
        case ast.InstanceType(family, args, constraint, state):
            lit = print_formula_literal(args, constraint)
            if family is None:
                return state if not args and constraint == TRUE else f"{state}({lit})"
            return f"{family}({lit}, {state})"
        case ast.FunType(params, ret):
            inner = ", ".join(print_type(p) for p in params)
            return f"({inner}) -> {print_type(ret)}"
        case ast.UnionType(members):
            return " | ".join(print_type(m) for m in members)
        case ast.MethodType(ret, params, env, _):
            ps = ", ".join(f"{print_type(c)} {n}" for n, c in params)
            es = ", ".join(f"{print_type(c)} {n}" for n, c in env)
            return f"{print_type(ret)} ({ps})[{es}]"
    raise TypeError(f"not a type: {ty!r}")


def print_formula_literal(args: tuple, constraint: Formula) -> str:
    pieces = [render_term(a) for a in args]
    if constraint != TRUE:
        if isinstance(constraint, And):
            pieces.extend(render(p) for p in constraint.parts)
        else:
            pieces.append(render(constraint))
    return f"phi({', '.join(pieces)})"


def print_block(e: ast.Expr, depth: int) -> str:
    pad = INDENT * depth
    stmts = list(_flatten(e))
    if not stmts:
        return "{ }"
    lines = ["{"]
    for s in stmts:
        if isinstance(s, _VarHead):
            kw = "var" if s.let.mutable else "val"
            ty = "" if s.let.declared is None else print_type(s.let.declared) + " "
            lines.append(f"{INDENT * (depth + 1)}{kw} {ty}{s.let.name} = "
                         f"{print_expr(s.let.init)};")
        else:
            lines.append(print_stmt(s, depth + 1) + ";")
    lines.append(pad + "}")
    return "\n".join(lines)


@dataclasses.dataclass
class _VarHead:
    let: ast.Let


def _flatten(e: ast.Expr):
    """Statement spine of a block: bindings head their continuation.

    Both surface forms of a binding parse to the same node, so blocks print
    them uniformly in declaration form.
    """
    match e:
        case ast.Skip():
            return
        case ast.Seq(first, second):
            yield from _flatten(first)
            yield from _flatten(second)
        case ast.Let(_, _, _, body, _):
            yield _VarHead(e)
            yield from _flatten(body)
        case _:
            yield e


def print_stmt(e: ast.Expr, depth: int) -> str:
    pad = INDENT * depth
    match e:
        case ast.Let(name, None, init, body, _):
            return (f"{pad}let {name} = {print_expr(init)} in\n"
                    + print_stmt(body, depth + 1))
        case ast.FieldAssign(target, name, value, body):
            return (f"{pad}let {target}.{name} = {print_expr(value)} in\n"
                    + print_stmt(body, depth + 1))
        case ast.Update(target, source):
            return f"{pad}{print_expr(target)} <- {print_expr(source)}"
        case ast.While(bound, inv, cond, body):
            names = ", ".join(bound)
            prefix = f"exists {names}." if names else "exists."
            return (f"{pad}while [{prefix} {render(inv)}] ({print_expr(cond)}) "
                    + print_block(body, depth))
        case ast.Match(scrut, scope, arms, default):
            head = print_expr(scrut) if scope is None else f"{print_expr(scrut)} : {scope}"
            lines = [f"{pad}match ({head}) {{"]
            for arm in arms:
                lines.append(f"{INDENT * (depth + 1)}case {arm.state} "
                             + print_block(arm.body, depth + 1))
            if default is not None:
                lines.append(f"{INDENT * (depth + 1)}default "
                             + print_block(default, depth + 1))
            lines.append(pad + "}")
            return "\n".join(lines)
        case ast.CaseExpr(scrut, body):
            return f"{pad}case {print_expr(scrut)} " + print_block(body, depth)
        case _:
            return pad + print_expr(e)


def print_expr(e: ast.Expr) -> str:
    match e:
        case ast.IntLit(v):
            return str(v)
        case ast.BoolLit(v):
            return "true" if v else "false"
        case ast.StrLit(v):
            escaped = v.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
            return f'"{escaped}"'
        case ast.VarRef(name):
            return name
        case ast.NewObj(state, inst, ctor_args):
            if inst is not None:
                return f"new {state}({print_formula_literal(inst.args, inst.constraint)})"
            inner = ", ".join(print_expr(a) for a in ctor_args)
            return f"new {state}({inner})"
        case ast.TypestateLit(perm, inst):
            return f"({perm}, {print_type(inst)})"
        case ast.FieldRef(obj, name):
            return f"{print_expr(obj)}.{name}"
        case ast.MethodCall(recv, method, args):
            inner = ", ".join(print_expr(a) for a in args)
            return f"{print_expr(recv)}.{method}({inner})"
        case ast.Skip():
            return ""
    raise TypeError(f"not printable as an inline expression: {e!r}")


def strip_spans(node):
    """Structural copy with every span reset; lets tests compare parse trees."""
    from .diagnostics import NO_SPAN, Span

    if dataclasses.is_dataclass(node) and not isinstance(node, type):
        if isinstance(node, Span):
            return NO_SPAN
        updates = {}
        for f in dataclasses.fields(node):
            value = getattr(node, f.name)
            updates[f.name] = strip_spans(value)
        return dataclasses.replace(node, **updates)
    if isinstance(node, tuple):
        return tuple(strip_spans(x) for x in node)
    return node
