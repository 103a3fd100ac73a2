import random

import pytest

import formlang as fl
from formlang import core


@pytest.fixture
def P1():
    return fl.FiniteElement("Lagrange", fl.triangle, 1)


@pytest.fixture
def P1_interval():
    return fl.FiniteElement("Lagrange", fl.interval, 1)


@pytest.fixture
def V2():
    return fl.VectorElement("Lagrange", fl.triangle, 1)


def random_scalar_expr(rng: random.Random, terminals, depth=3):
    """A random scalar expression over the given scalar terminals."""
    if depth == 0 or rng.random() < 0.3:
        choice = rng.random()
        if choice < 0.6:
            return rng.choice(terminals)
        if choice < 0.8:
            return fl.as_expr(rng.randint(1, 5))
        return fl.as_expr(round(rng.uniform(0.5, 3.0), 3))
    op = rng.choice(["add", "sub", "mul", "div", "sin", "exp"])
    a = random_scalar_expr(rng, terminals, depth - 1)
    if op == "add":
        return a + random_scalar_expr(rng, terminals, depth - 1)
    if op == "sub":
        return a - random_scalar_expr(rng, terminals, depth - 1)
    if op == "mul":
        return a * random_scalar_expr(rng, terminals, depth - 1)
    if op == "div":
        return a / fl.as_expr(rng.randint(1, 4))
    if op == "sin":
        return fl.sin(a)
    return fl.exp(a * fl.as_expr(0.1))


def random_dag(rng: random.Random, cell=None, depth=4):
    """A random expression DAG with shared subexpressions."""
    cell = cell or fl.interval
    E = fl.FiniteElement("Lagrange", cell, 1)
    terminals = [
        fl.coefficient(E, count=100 + k) for k in range(3)
    ] + [fl.spatial_coordinate(cell)[0]]
    pool = list(terminals)
    for _ in range(depth * 3):
        a = rng.choice(pool)
        b = rng.choice(pool)
        op = rng.choice(["+", "*", "-", "sin", "/"])
        if op == "+":
            pool.append(a + b)
        elif op == "-":
            pool.append(a - b)
        elif op == "*":
            pool.append(a * b)
        elif op == "/":
            pool.append(a / fl.as_expr(rng.randint(1, 3)))
        else:
            pool.append(fl.sin(a))
    return pool[-1]
