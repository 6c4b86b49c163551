"""IR sources for the built-in kernels used by tests, experiments and the CLI.

Each builder returns IR text; ``load(name)`` parses one by name.
"""

from __future__ import annotations

from .ir import Program, parse_program

FIG5 = """\
; Loop with three LoD control-dependency sources (2, 3, 5) and stores a..e in
; blocks 2, 4, 5, 6, 7. Block 1 branches on a value that does not come from memory.
array @A[1024]

func @fig5(%N) {
E:
  br H
H:
  %i = phi [0, E], [%i1, L]
  %c = icmp lt %i, %N
  condbr %c, 1, X
1:
  %x = load @A[%i] !x
  %h = opaque parity(%i)
  %p = icmp gt %h, 0
  condbr %p, 2, 3
2:
  %ia = add %i, 1
  %va = opaque fa(%x)
  store @A[%ia], %va !a
  %c2 = icmp gt %x, 0
  condbr %c2, 5, 7
3:
  %s3 = opaque sel(%x)
  switch %s3, 4, 5, 6
4:
  %ic = add %i, 2
  %vc = opaque fc(%x)
  store @A[%ic], %vc !c
  br 5
5:
  %ib = add %i, 3
  %vb = opaque fb(%x)
  store @A[%ib], %vb !b
  %c5 = icmp gt %x, 5
  condbr %c5, 7, L
6:
  %id = add %i, 4
  %vd = opaque fd(%x)
  store @A[%id], %vd !d
  br L
7:
  %ie = add %i, 5
  %ve = opaque fe(%x)
  store @A[%ie], %ve !e
  br L
L:
  %i1 = add %i, 1
  br H
X:
  ret
}
"""


def _guarded_update(guard_array: str, name: str) -> str:
    arrays = "array @A[1024]\narray @idx[1024]\n"
    if guard_array != "A":
        arrays += f"array @{guard_array}[1024]\n"
    return arrays + f"""
func @{name}(%N) {{
E:
  br H
H:
  %i = phi [0, E], [%i1, L]
  %c = icmp lt %i, %N
  condbr %c, B, X
B:
  %x = load @{guard_array}[%i] !x
  %j = load @idx[%i] !j
  %p = icmp gt %x, 0
  condbr %p, T, L
T:
  %v = load @A[%j] !v
  %w = opaque f(%v)
  store @A[%j], %w !s
  br L
L:
  %i1 = add %i, 1
  br H
X:
  ret
}}
"""


# ``for i: if (C[i] > 0) A[idx[i]] = f(A[idx[i]])`` - no loss of decoupling
FIG1A = _guarded_update("C", "fig1a")
# ``for i: if (A[i] > 0) A[idx[i]] = f(A[idx[i]])`` - store control-dependent on a load from A
FIG1B = _guarded_update("A", "fig1b")
HIST = FIG1B.replace("@fig1b", "@hist")

FIG3 = """\
; Three control-dependent stores whose hoisted order is (s2, s0, s1).
array @A[1024]

func @fig3(%N) {
E:
  br H
H:
  %i = phi [0, E], [%i1, L]
  %c = icmp lt %i, %N
  condbr %c, S, X
S:
  %x = load @A[%i] !x
  %c0 = icmp gt %x, 0
  condbr %c0, B, L
B:
  %c1 = icmp gt %x, 1
  condbr %c1, P, J
P:
  %a2 = add %i, 1
  store @A[%a2], 2 !s2
  br J
J:
  %c2 = icmp gt %x, 2
  condbr %c2, R, K
R:
  %a0 = add %i, 2
  store @A[%a0], 10 !s0
  br K
K:
  %c3 = icmp gt %x, 3
  condbr %c3, T, L
T:
  %a1 = add %i, 3
  store @A[%a1], 11 !s1
  br L
L:
  %i1 = add %i, 1
  br H
X:
  ret
}
"""

FIG6 = """\
; Two sibling switches that both bypass the stores d (block 5) and e (block 6).
; Each bypass edge gets its own poison block; equal pairs merge.
array @A[1024]
array @B[1024]

func @fig6(%N) {
E:
  br H
H:
  %i = phi [0, E], [%i1, 9]
  %c = icmp lt %i, %N
  condbr %c, 1, X
1:
  %x = load @A[%i] !x
  %p = icmp gt %x, 0
  condbr %p, 2, 7
2:
  %h = opaque parity(%i)
  %q = icmp gt %h, 0
  condbr %q, 3, 4
3:
  %s1 = opaque sel(%x)
  switch %s1, 5, 6, 8
4:
  %s2 = opaque sel2(%x)
  switch %s2, 5, 6, 8
5:
  %id = add %i, 1
  %vd = opaque fd(%x)
  store @A[%id], %vd !d
  br 6
6:
  %ie = add %i, 2
  %ve = opaque fe(%x)
  store @A[%ie], %ve !e
  br 8
7:
  %y = opaque g(%x)
  br 8
8:
  %z = phi [%y, 7], [0, 3], [0, 4], [0, 6]
  %iz = add %i, 4
  store @B[%iz], %z !z
  br 9
9:
  %i1 = add %i, 1
  br H
X:
  ret
}
"""

THR = """\
; Zero RGB pixels whose channel sum exceeds a threshold.
array @R[1024]
array @G[1024]
array @B[1024]

func @thr(%N, %T) {
E:
  br H
H:
  %i = phi [0, E], [%i1, L]
  %c = icmp lt %i, %N
  condbr %c, P, X
P:
  %r = load @R[%i] !r
  %g = load @G[%i] !g
  %b = load @B[%i] !b
  %rg = add %r, %g
  %s = add %rg, %b
  %p = icmp gt %s, %T
  condbr %p, Z, L
Z:
  store @R[%i], 0 !zr
  store @G[%i], 0 !zg
  store @B[%i], 0 !zb
  br L
L:
  %i1 = add %i, 1
  br H
X:
  ret
}
"""

MM = """\
; Greedy maximal matching over an edge list.
array @EU[4096]
array @EV[4096]
array @M[4096]

func @mm(%N) {
E:
  br H
H:
  %e = phi [0, E], [%e1, L]
  %c = icmp lt %e, %N
  condbr %c, P, X
P:
  %u = load @EU[%e] !u
  %v = load @EV[%e] !v
  %mu = load @M[%u] !mu
  %mv = load @M[%v] !mv
  %s = add %mu, %mv
  %p = icmp eq %s, 0
  condbr %p, T, L
T:
  store @M[%u], 1 !su
  store @M[%v], 1 !sv
  br L
L:
  %e1 = add %e, 1
  br H
X:
  ret
}
"""

PURE = """\
func @pure(%N) {
E:
  br H
H:
  %i = phi [0, E], [%i1, H]
  %acc = phi [0, E], [%acc1, H]
  %acc1 = add %acc, %i
  %i1 = add %i, 1
  %c = icmp lt %i1, %N
  condbr %c, H, X
X:
  ret
}
"""


def nesting_template(n: int, oracle: bool = False) -> str:
    """``if x > 0 {store_1; if x > 1 {store_2; ...}}`` with ``n`` nesting levels.

    ``oracle=True`` drops the guards: every store runs unconditionally, so the
    address stream no longer depends on loaded data (and the results differ).
    """
    if n < 1:
        raise ValueError("nesting depth must be >= 1")
    size = 1024 * (n + 1)
    lines = [f"array @A[{size}]", "", "func @%s%d(%%N) {" % ("oracle" if oracle else "nest", n),
             "E:", "  br H", "H:", "  %i = phi [0, E], [%i1, L]",
             "  %c = icmp lt %i, %N", "  condbr %c, B, X", "B:", "  %x = load @A[%i] !x"]
    if oracle:
        for k in range(1, n + 1):
            lines += [f"  %a{k} = add %i, {k * 1024}", f"  %v{k} = add %x, {k}", f"  store @A[%a{k}], %v{k} !s{k}"]
        lines.append("  br L")
    else:
        lines += ["  %g1 = icmp gt %x, 0", "  condbr %g1, T1, L"]
        for k in range(1, n + 1):
            lines += [f"T{k}:", f"  %a{k} = add %i, {k * 1024}", f"  %v{k} = add %x, {k}",
                      f"  store @A[%a{k}], %v{k} !s{k}"]
            if k < n:
                lines += [f"  %g{k + 1} = icmp gt %x, {k}", f"  condbr %g{k + 1}, T{k + 1}, L"]
            else:
                lines.append("  br L")
    lines += ["L:", "  %i1 = add %i, 1", "  br H", "X:", "  ret", "}", ""]
    return "\n".join(lines)


SOURCES = {
    "fig5": FIG5,
    "fig6": FIG6,
    "fig1a": FIG1A,
    "fig1b": FIG1B,
    "hist": HIST,
    "fig3": FIG3,
    "thr": THR,
    "mm": MM,
    "pure": PURE,
}


def load(name: str) -> Program:
    if name.startswith("nest"):
        return parse_program(nesting_template(int(name[4:])))
    return parse_program(SOURCES[name])
