"""Concrete syntax: tokenizer and recursive-descent parser for .brts source.

The surface spellings for the mathematical notation are fixed here:
``Pi`` for the family former, ``phi(...)`` for formula literals (leading
plain terms are coordinate arguments, trailing comparisons are constraint
conjuncts), ``>>`` for transitions, ``->`` is reserved for function types,
``[exists v1, v2. F]`` for loop invariants, and ``//`` line comments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .diagnostics import BrtsError, Span
from .presburger import (
    Add, Const, Formula, Neg, Scale, Term, Var,
    conj, disj, eq, exists, ge, gt, implies, le, lt, ne, neg, TRUE, FALSE,
)
from . import syntax as ast

KEYWORDS = {
    "state", "case", "of", "var", "val", "void", "int", "bool", "string",
    "new", "let", "in", "match", "default", "while", "type", "exists",
    "true", "false",
}

SYMBOLS = [
    ">>", "->", "<-", "==", "!=", "<=", ">=", "&&", "||", "=>",
    "{", "}", "(", ")", "[", "]", ";", ",", ".", ":", "=", "<", ">",
    "~", "+", "-", "*", "_",
]


@dataclass(frozen=True)
class Token:
    kind: str       # keyword | ident | int | string | symbol | eof
    lexeme: str
    span: Span


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                i += 1
            continue
        start = Span(line, col)
        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            tokens.append(Token("int", source[i:j], Span(line, col, line, col + (j - i) - 1)))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_" and i + 1 < n and (source[i + 1].isalnum() or source[i + 1] == "_"):
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            if j < n and source[j] == "'":
                j += 1
            word = source[i:j]
            kind = "keyword" if word in KEYWORDS else "ident"
            tokens.append(Token(kind, word, Span(line, col, line, col + (j - i) - 1)))
            col += j - i
            i = j
            continue
        if ch == '"':
            j = i + 1
            buf = []
            while j < n and source[j] != '"':
                if source[j] == "\n":
                    raise BrtsError("LexError", "unterminated string literal", start)
                if source[j] == "\\" and j + 1 < n:
                    esc = source[j + 1]
                    buf.append({"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc, esc))
                    j += 2
                else:
                    buf.append(source[j])
                    j += 1
            if j >= n:
                raise BrtsError("LexError", "unterminated string literal", start)
            tokens.append(Token("string", "".join(buf), Span(line, col, line, col + (j - i))))
            col += j - i + 1
            i = j + 1
            continue
        for sym in SYMBOLS:
            if source.startswith(sym, i):
                tokens.append(Token("symbol", sym, Span(line, col, line, col + len(sym) - 1)))
                i += len(sym)
                col += len(sym)
                break
        else:
            raise BrtsError("LexError", f"unexpected character {ch!r}", start)
    tokens.append(Token("eof", "", Span(line, col)))
    return tokens


class Parser:
    def __init__(self, tokens: list[Token], filename: str = "<input>"):
        self.tokens = tokens
        self.pos = 0
        self.filename = filename

    # -- token plumbing ------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def at(self, lexeme: str) -> bool:
        t = self.peek()
        return t.lexeme == lexeme and t.kind in ("keyword", "symbol")

    def at_ident(self, name: Optional[str] = None) -> bool:
        t = self.peek()
        return t.kind == "ident" and (name is None or t.lexeme == name)

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def expect(self, lexeme: str) -> Token:
        if not self.at(lexeme):
            self.fail(f"expected '{lexeme}'")
        return self.advance()

    def expect_ident(self) -> Token:
        if self.peek().kind != "ident":
            self.fail("expected an identifier")
        return self.advance()

    def fail(self, message: str) -> None:
        t = self.peek()
        got = t.lexeme or "end of input"
        raise BrtsError("ParseError", f"{message}, found '{got}'", t.span)

    # -- program structure ---------------------------------------------

    def program(self) -> ast.Program:
        states = []
        while not self.peek().kind == "eof":
            if not self.at("state"):
                self.fail("expected 'state'")
            states.append(self.state_decl())
        return ast.Program(tuple(states), Span(1, 1))

    def state_decl(self) -> ast.StateDecl:
        start = self.expect("state").span
        name = self.expect_ident().lexeme
        parent = None
        if self.at("case"):
            self.advance()
            self.expect("of")
            parent = self.expect_ident().lexeme
        self.expect("{")
        decls: list[ast.Decl] = []
        while not self.at("}"):
            decls.append(self.member())
        self.expect("}")
        return ast.StateDecl(name, parent, tuple(decls), start)

    def member(self) -> ast.Decl:
        if self.at("state"):
            return self.state_decl()
        if self.at("type"):
            return self.typefam_decl()
        if self.at("var") or self.at("val"):
            return self.field_decl()
        return self.method_decl()

    def typefam_decl(self) -> ast.TypeFamDecl:
        start = self.expect("type").span
        name = self.expect_ident().lexeme
        self.expect(":")
        if not self.at_ident("Pi"):
            self.fail("expected 'Pi'")
        self.advance()
        self.expect("(")
        if not self.at_ident("phi"):
            self.fail("expected 'phi'")
        self.advance()
        self.expect("(")
        coords = [self.expect_ident().lexeme]
        while self.at(","):
            self.advance()
            coords.append(self.expect_ident().lexeme)
        self.expect(")")
        self.expect(",")
        bound = self.expect_ident().lexeme
        self.expect(")")
        self.expect(";")
        return ast.TypeFamDecl(name, tuple(coords), bound, start)

    def field_decl(self) -> ast.FieldDecl:
        tok = self.advance()
        mutable = tok.lexeme == "var"
        ty = self.type_()
        name = self.expect_ident().lexeme
        init = None
        if self.at("="):
            self.advance()
            init = self.expr()
        self.expect(";")
        return ast.FieldDecl(mutable, ty, name, init, tok.span)

    def method_decl(self) -> ast.MethodDecl:
        start = self.peek().span
        ret = self.type_()
        name = self.expect_ident().lexeme
        self.expect("(")
        params: list[ast.Param] = []
        while not self.at(")"):
            params.append(self.param())
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        self.expect("[")
        env: list[ast.Param] = []
        while not self.at("]"):
            env.append(self.param())
            if not self.at("]"):
                self.expect(",")
        self.expect("]")
        if self.at(";"):
            self.advance()
            body: Optional[ast.Expr] = None
        else:
            body = self.block()
        return ast.MethodDecl(ret, name, tuple(params), tuple(env), body, start)

    def param(self) -> ast.Param:
        start = self.peek().span
        pre = self.type_()
        self.expect(">>")
        post = self.type_()
        name = self.advance()
        if name.kind != "ident":
            self.fail("expected a parameter name")
        return ast.Param(name.lexeme, ast.ChangeType(pre, post), start)

    # -- types -----------------------------------------------------------

    def type_(self) -> ast.Type:
        t = self.peek()
        if t.lexeme in ("void", "int", "bool", "string"):
            self.advance()
            return ast.PrimType(t.lexeme)
        if self.at("_"):
            self.advance()
            return ast.WildcardType()
        if self.at("("):
            self.advance()
            perm = self.permission()
            self.expect(",")
            inner = self.type_()
            self.expect(")")
            return ast.PermPair(perm, inner)
        if t.kind == "ident":
            name = self.advance().lexeme
            if self.at("("):
                return self.instance_type(name)
            return ast.StateRef(name)
        self.fail("expected a type")
        raise AssertionError

    def permission(self) -> int:
        negate = False
        if self.at("-"):
            self.advance()
            negate = True
        tok = self.peek()
        if tok.kind != "int":
            self.fail("expected a permission (1, 2 or -1)")
        self.advance()
        value = -int(tok.lexeme) if negate else int(tok.lexeme)
        if value not in (1, 2, -1):
            raise BrtsError("ParseError", f"invalid permission {value}", tok.span)
        return value

    def instance_type(self, family: str) -> ast.InstanceType:
        self.expect("(")
        args, constraint = self.formula_literal()
        self.expect(",")
        state = self.expect_ident().lexeme
        self.expect(")")
        return ast.InstanceType(family, tuple(args), constraint, state)

    def formula_literal(self) -> tuple[list[Term], Formula]:
        """phi(t1, .., tk, c1, ..، cn): plain terms then constraint conjuncts."""
        if not self.at_ident("phi"):
            self.fail("expected 'phi'")
        self.advance()
        self.expect("(")
        args: list[Term] = []
        conjuncts: list[Formula] = []
        while not self.at(")"):
            kind, value = self.formula_element()
            if kind == "term":
                if conjuncts:
                    self.fail("coordinate arguments must precede constraints")
                args.append(value)
            else:
                conjuncts.append(value)
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        constraint = conj(*conjuncts) if conjuncts else TRUE
        return args, constraint

    def formula_element(self) -> tuple[str, Term | Formula]:
        if self.at("true") or self.at("false") or self.at("~") or self.at("exists"):
            return "formula", self.formula()
        save = self.pos
        t = self.term()
        if self.peek().lexeme in ("==", "!=", "<=", ">=", "<", ">", "&&", "||", "=>"):
            self.pos = save
            return "formula", self.formula()
        return "term", t

    # -- formulas ---------------------------------------------------------

    def formula(self) -> Formula:
        f = self.formula_or()
        if self.at("=>"):
            self.advance()
            return implies(f, self.formula())
        return f

    def formula_or(self) -> Formula:
        f = self.formula_and()
        while self.at("||") or self.at_ident("or"):
            self.advance()
            f = disj(f, self.formula_and())
        return f

    def formula_and(self) -> Formula:
        f = self.formula_unary()
        while self.at("&&") or self.at_ident("and"):
            self.advance()
            f = conj(f, self.formula_unary())
        return f

    def formula_unary(self) -> Formula:
        if self.at("~"):
            self.advance()
            return neg(self.formula_unary())
        if self.at("exists"):
            self.advance()
            names = []
            while self.peek().kind == "ident":
                names.append(self.advance().lexeme)
                if self.at(","):
                    self.advance()
            self.expect(".")
            body = self.formula()
            for v in reversed(names):
                body = exists(v, body)
            return body
        if self.at("true"):
            self.advance()
            return TRUE
        if self.at("false"):
            self.advance()
            return FALSE
        if self.at("("):
            save = self.pos
            self.advance()
            try:
                f = self.formula()
                self.expect(")")
                if self.peek().lexeme in ("==", "!=", "<=", ">=", "<", ">"):
                    raise BrtsError("ParseError", "comparison of formulas", self.peek().span)
                return f
            except BrtsError:
                self.pos = save
        return self.comparison()

    def comparison(self) -> Formula:
        t1 = self.term()
        op = self.peek()
        table = {"==": eq, "!=": ne, "<=": le, ">=": ge, "<": lt, ">": gt}
        if op.lexeme not in table:
            self.fail("expected a comparison operator")
        self.advance()
        t2 = self.term()
        return table[op.lexeme](t1, t2)

    def term(self) -> Term:
        t = self.term_factor()
        while self.at("+") or self.at("-"):
            op = self.advance().lexeme
            rhs = self.term_factor()
            t = Add(t, rhs) if op == "+" else Add(t, Neg(rhs))
        return t

    def term_factor(self) -> Term:
        if self.at("-"):
            self.advance()
            return Neg(self.term_factor())
        tok = self.peek()
        if tok.kind == "int":
            self.advance()
            value = int(tok.lexeme)
            if self.at("*"):
                self.advance()
                return Scale(value, self.term_factor())
            return Const(value)
        if tok.kind == "ident":
            self.advance()
            return Var(tok.lexeme)
        if self.at("("):
            self.advance()
            t = self.term()
            self.expect(")")
            return t
        self.fail("expected an arithmetic term")
        raise AssertionError

    # -- statements and expressions ----------------------------------------

    def block(self) -> ast.Expr:
        start = self.expect("{").span
        body = self.stmt_seq()
        self.expect("}")
        return body if body is not None else ast.Skip(start)

    def stmt_seq(self) -> Optional[ast.Expr]:
        if self.at("}"):
            return None
        first = self.stmt()
        if self.at(";"):
            self.advance()
        if isinstance(first, _VarDeclMarker):
            rest = self.stmt_seq()
            body = rest if rest is not None else ast.Skip(first.span)
            return ast.Let(first.name, first.declared, first.init, body,
                           first.mutable, first.span)
        rest = self.stmt_seq()
        if rest is None:
            return first
        return ast.Seq(first, rest, first.span if hasattr(first, "span") else Span(0, 0))

    def stmt(self) -> ast.Expr:
        if self.at("let"):
            return self.let_stmt()
        if self.at("var") or self.at("val"):
            tok = self.advance()
            declared = None
            if not (self.peek().kind == "ident" and self.peek(1).lexeme == "="):
                declared = self.type_()
            name = self.expect_ident().lexeme
            self.expect("=")
            init = self.expr()
            return _VarDeclMarker(name, declared, init, tok.lexeme == "var", tok.span)
        if self.at("while"):
            return self.while_stmt()
        if self.at("match"):
            return self.match_stmt()
        if self.at("case"):
            start = self.advance().span
            scrut = self.expr()
            body = self.block()
            return ast.CaseExpr(scrut, body, start)
        e = self.expr()
        if self.at("<-"):
            self.advance()
            src = self.expr()
            return ast.Update(e, src, e.span)
        return e

    def let_stmt(self) -> ast.Expr:
        start = self.expect("let").span
        name = self.expect_ident().lexeme
        if self.at("."):
            self.advance()
            fname = self.expect_ident().lexeme
            self.expect("=")
            value = self.expr()
            self.expect("in")
            body = self._stmt_body()
            return ast.FieldAssign(name, fname, value, body, start)
        self.expect("=")
        init = self.expr()
        self.expect("in")
        body = self._stmt_body()
        return ast.Let(name, None, init, body, False, start)

    def _stmt_body(self) -> ast.Expr:
        body = self.stmt()
        if isinstance(body, _VarDeclMarker):
            raise BrtsError("ParseError",
                            "a var/val declaration needs trailing statements; "
                            "it cannot be the whole body of let .. in",
                            body.span)
        return body

    def while_stmt(self) -> ast.Expr:
        start = self.expect("while").span
        if not self.at("["):
            raise BrtsError(
                "ParseError",
                "while requires an invariant annotation: while [exists ... . F] (cond) { body }",
                self.peek().span)
        self.expect("[")
        self.expect("exists")
        names = []
        while self.peek().kind == "ident":
            names.append(self.advance().lexeme)
            if self.at(","):
                self.advance()
        self.expect(".")
        invariant = self.formula()
        self.expect("]")
        self.expect("(")
        cond = self.expr()
        self.expect(")")
        body = self.block()
        return ast.While(tuple(names), invariant, cond, body, start)

    def match_stmt(self) -> ast.Expr:
        start = self.expect("match").span
        self.expect("(")
        scrut = self.expr()
        scope = None
        if self.at(":"):
            self.advance()
            scope = self.expect_ident().lexeme
        self.expect(")")
        self.expect("{")
        arms: list[ast.MatchArm] = []
        default = None
        while not self.at("}"):
            if self.at("case"):
                aspan = self.advance().span
                state = self.expect_ident().lexeme
                body = self.block()
                arms.append(ast.MatchArm(state, body, aspan))
            elif self.at("default"):
                self.advance()
                default = self.block()
            else:
                self.fail("expected 'case' or 'default'")
            if self.at(";"):
                self.advance()
        self.expect("}")
        return ast.Match(scrut, scope, tuple(arms), default, start)

    def expr(self) -> ast.Expr:
        e = self.primary()
        while self.at("."):
            self.advance()
            name = self.expect_ident()
            if self.at("("):
                self.advance()
                args = []
                while not self.at(")"):
                    args.append(self.expr())
                    if not self.at(")"):
                        self.expect(",")
                self.expect(")")
                e = ast.MethodCall(e, name.lexeme, tuple(args), name.span)
            else:
                e = ast.FieldRef(e, name.lexeme, name.span)
        return e

    def primary(self) -> ast.Expr:
        tok = self.peek()
        if tok.kind == "int":
            self.advance()
            return ast.IntLit(int(tok.lexeme), tok.span)
        if tok.kind == "string":
            self.advance()
            return ast.StrLit(tok.lexeme, tok.span)
        if self.at("true") or self.at("false"):
            self.advance()
            return ast.BoolLit(tok.lexeme == "true", tok.span)
        if self.at("new"):
            self.advance()
            state = self.expect_ident().lexeme
            self.expect("(")
            inst = None
            ctor_args: list[ast.Expr] = []
            if self.at_ident("phi"):
                args, constraint = self.formula_literal()
                inst = ast.InstanceType(None, tuple(args), constraint, state)
            else:
                while not self.at(")"):
                    ctor_args.append(self.expr())
                    if not self.at(")"):
                        self.expect(",")
            self.expect(")")
            return ast.NewObj(state, inst, tuple(ctor_args), tok.span)
        if self.at("("):
            # (perm, FamilyOrState(...)) typestate literal
            self.advance()
            perm = self.permission()
            self.expect(",")
            ty = self.type_()
            self.expect(")")
            if isinstance(ty, ast.StateRef):
                ty = ast.InstanceType(None, (), TRUE, ty.name)
            if not isinstance(ty, ast.InstanceType):
                raise BrtsError("ParseError", "expected a typestate literal", tok.span)
            return ast.TypestateLit(perm, ty, tok.span)
        if tok.kind == "ident":
            self.advance()
            return ast.VarRef(tok.lexeme, tok.span)
        self.fail("expected an expression")
        raise AssertionError


@dataclass(frozen=True)
class _VarDeclMarker(ast.Expr):
    """Internal: a var/val declaration before its trailing statements are folded in."""
    name: str
    declared: Optional[ast.Type]
    init: ast.Expr
    mutable: bool
    span: Span


def parse_program(source: str, filename: str = "<input>") -> ast.Program:
    return Parser(tokenize(source), filename).program()


def parse_formula(source: str) -> Formula:
    p = Parser(tokenize(source))
    f = p.formula()
    if p.peek().kind != "eof":
        p.fail("trailing input after formula")
    return f


def parse_term(source: str) -> Term:
    p = Parser(tokenize(source))
    t = p.term()
    if p.peek().kind != "eof":
        p.fail("trailing input after term")
    return t
