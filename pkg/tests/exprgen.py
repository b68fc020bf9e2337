"""Random expression trees in ``c`` that stay well defined on [0.4, 2.1]."""
from horizon_limit.expr import BinOp, Call, Neg, Num, Var


def _num(rng, lo=0.5, hi=3.0):
    x = float(round(rng.uniform(lo, hi), 3))
    return Num(x) if x >= 0 else Neg(Num(-x))  # the parser never yields negative literals


def positive(rng, depth):
    """A tree that is at least ~0.2 and at most ~50 on the sample interval."""
    if depth == 0:
        return Var("c") if rng.random() < 0.6 else _num(rng)
    pick = rng.integers(7)
    if pick == 0:
        return BinOp("+", positive(rng, depth - 1), positive(rng, depth - 1))
    if pick == 1:
        return BinOp("*", positive(rng, depth - 1), positive(rng, depth - 1))
    if pick == 2:
        return BinOp("/", positive(rng, depth - 1), positive(rng, depth - 1))
    if pick == 3:
        return Call("sqrt", (positive(rng, depth - 1),))
    if pick == 4:
        return BinOp("^", positive(rng, depth - 1), _num(rng, -1.5, 1.5))
    if pick == 5:
        return Call("exp", (Call("sin", (anything(rng, depth - 1),)),))
    return BinOp("+", _num(rng, 1.0, 2.0), Call("cos", (anything(rng, depth - 1),)))


def anything(rng, depth):
    if depth == 0:
        return Var("c") if rng.random() < 0.7 else _num(rng, -2, 2)
    pick = rng.integers(6)
    if pick == 0:
        return positive(rng, depth)
    if pick == 1:
        return Neg(anything(rng, depth - 1))
    if pick == 2:
        return BinOp("-", anything(rng, depth - 1), anything(rng, depth - 1))
    if pick == 3:
        return BinOp("*", anything(rng, depth - 1), anything(rng, depth - 1))
    if pick == 4:
        return Call("log", (positive(rng, depth - 1),))
    return Call("sin", (anything(rng, depth - 1),))


def random_expressions(rng, n, depth=3):
    return [anything(rng, depth) for _ in range(n)]
