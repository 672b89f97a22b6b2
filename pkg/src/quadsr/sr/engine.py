"""Genetic-programming engine for symbolic regression.

Evolves expression trees against a sum-of-absolute-errors fitness with a
Pareto front over (complexity, fitness) as the archive.  Selection is
tournament on fitness with complexity as tie-break; offspring are built
by subtree crossover, point/subtree/hoist mutation, or whole-tree
constant jitter, with numeric constants refined by coordinate descent on
the front members.  Everything is driven by a single seed.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from .expr import (
    BINARY_OPS,
    Binary,
    Const,
    Expr,
    Unary,
    UNARY_OPS,
    Var,
    depth,
    eval_tree,
    node_count,
    simplify,
)


@dataclass
class SRConfig:
    """Evolution settings.

    The three operator-choice weights (crossover, mutation, constant
    jitter) must sum to one.  max_depth caps every tree in the run.
    """

    population_size: int = 500
    generations: int = 200
    tournament_size: int = 7
    p_crossover: float = 0.8
    p_mutation: float = 0.15
    p_const_jitter: float = 0.05
    max_depth: int = 12
    seed: int = 0
    const_range: tuple[float, float] = (-10.0, 10.0)
    p_unary: float = 0.15
    include_sqrt: bool = False
    init_depth: tuple[int, int] = (2, 6)
    elite_fraction: float = 0.08
    early_stop_rel: float = 1e-6
    refine_top: int = 6
    refine_sweeps: int = 1
    refine_budget: int = 40
    final_refine_sweeps: int = 12
    final_refine_budget: int = 140
    linear_scaling: bool = True

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not (1 <= self.tournament_size <= self.population_size):
            raise ValueError("tournament_size must be in [1, population_size]")
        probs = (self.p_crossover, self.p_mutation, self.p_const_jitter)
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ValueError("operator probabilities must lie in [0, 1]")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("operator-choice weights must sum to 1")
        if self.max_depth < 2:
            raise ValueError("max_depth must be >= 2")
        lo, hi = self.init_depth
        if not (1 <= lo <= hi <= self.max_depth):
            raise ValueError("init_depth must satisfy 1 <= lo <= hi <= max_depth")
        if not (self.const_range[0] < self.const_range[1]):
            raise ValueError("const_range must be increasing")

    @property
    def unary_ops(self) -> tuple[str, ...]:
        return UNARY_OPS + (("sqrt",) if self.include_sqrt else ())


@dataclass(frozen=True)
class FrontEntry:
    tree: Expr
    complexity: int
    fitness: float


class ParetoFront:
    """Non-dominated (complexity, fitness) archive, complexity-ascending."""

    def __init__(self):
        self._best: dict[int, FrontEntry] = {}
        self.generations_run: int = 0
        self.baseline: float = float("nan")
        self.history: list[float] = []

    def update(self, tree: Expr, fitness: float) -> None:
        if not math.isfinite(fitness):
            return
        c = node_count(tree)
        cur = self._best.get(c)
        if cur is None or fitness < cur.fitness:
            self._best[c] = FrontEntry(tree, c, fitness)

    @property
    def entries(self) -> list[FrontEntry]:
        """Dominance-pruned entries, sorted by ascending complexity."""
        out: list[FrontEntry] = []
        best = float("inf")
        for c in sorted(self._best):
            e = self._best[c]
            if e.fitness < best:
                out.append(e)
                best = e.fitness
        return out

    @property
    def best_fitness(self) -> float:
        return min((e.fitness for e in self._best.values()),
                   default=float("inf"))

    def select(self, rel_window: float = 0.05) -> FrontEntry:
        """Lowest-complexity entry within rel_window of the best fitness."""
        entries = self.entries
        if not entries:
            raise ValueError("empty front")
        best = entries[-1].fitness
        slack = abs(best) * rel_window
        if math.isfinite(self.baseline):
            slack += 1e-12 * self.baseline
        for e in entries:
            if e.fitness <= best + slack:
                return e
        return entries[-1]


def fitness(tree: Expr, X: np.ndarray, y: np.ndarray) -> float:
    """Sum of absolute errors; +inf if any prediction is non-finite."""
    pred = eval_tree(tree, X)
    if not np.all(np.isfinite(pred)):
        return float("inf")
    return float(np.sum(np.abs(pred - y)))


def linear_fit(pred: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares (alpha, beta) so that y ~ alpha + beta * pred.

    Falls back to (median(y), 0) when pred carries no variance, which is
    the best constant under the absolute-error fitness.
    """
    var = float(np.var(pred))
    if not math.isfinite(var) or var < 1e-30:
        return float(np.median(y)), 0.0
    beta = float(np.cov(pred, y, bias=True)[0, 1]) / var
    alpha = float(np.mean(y)) - beta * float(np.mean(pred))
    if not (math.isfinite(alpha) and math.isfinite(beta)):
        return float(np.median(y)), 0.0
    return alpha, beta


def scaled_fitness(tree: Expr, X: np.ndarray, y: np.ndarray) -> float:
    """Absolute-error fitness after an optimal linear map of the output.

    Scoring beta*tree + alpha instead of the bare tree means any tree
    merely *proportional* to the target is already near-optimal, so the
    search only has to discover structure; magnitudes come for free.
    """
    pred = eval_tree(tree, X)
    if not np.all(np.isfinite(pred)):
        return float("inf")
    alpha, beta = linear_fit(pred, y)
    return float(np.sum(np.abs(y - alpha - beta * pred)))


# Trees whose top level splits into more terms than this fall back to
# whole-tree scalar scaling, bounding the regression cost per evaluation.
MAX_SCALED_TERMS = 16


def split_terms(tree: Expr) -> list[Expr]:
    """Top-level additive pieces of the tree (signs left to regression)."""
    out: list[Expr] = []

    def walk(node: Expr) -> None:
        if isinstance(node, Binary) and node.op in ("+", "-"):
            walk(node.left)
            walk(node.right)
        else:
            out.append(node)

    walk(tree)
    return out


def _regress(cols: list[np.ndarray], y: np.ndarray,
             intercept: bool) -> tuple[np.ndarray, float] | None:
    """Ridge-stabilized least squares of y on the columns.

    Returns (coefficients, absolute-error fitness) with the intercept
    last when requested, or None when the solve fails.  The tiny
    scale-proportional ridge keeps the normal equations well-posed when
    columns duplicate each other, at negligible bias.
    """
    a = np.column_stack(cols + ([np.ones_like(y)] if intercept else []))
    ata = a.T @ a
    lam = 1e-10 * np.trace(ata) / ata.shape[0] + 1e-30
    ata[np.diag_indices_from(ata)] += lam
    try:
        coef = np.linalg.solve(ata, a.T @ y)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(coef)):
        return None
    return coef, float(np.sum(np.abs(y - a @ coef)))


def termwise_fit(tree: Expr, X: np.ndarray,
                 y: np.ndarray) -> tuple[list[Expr], np.ndarray, float] | None:
    """Least-squares coefficients for each top-level term plus intercept.

    Returns (terms, coefficients, fitness) where fitness is the absolute
    error of sum(coef_j * term_j) + intercept; None if any term
    evaluates non-finite or the tree has too many terms for the capped
    regression.
    """
    terms = split_terms(tree)
    if len(terms) > MAX_SCALED_TERMS:
        return None
    cols = []
    for t in terms:
        v = eval_tree(t, X)
        if not np.all(np.isfinite(v)):
            return None
        cols.append(v)
    sol = _regress(cols, y, intercept=True)
    if sol is None:
        return None
    coef, f = sol
    return terms, coef, f


def termwise_fitness(tree: Expr, X: np.ndarray, y: np.ndarray) -> float:
    """Absolute-error fitness with a free coefficient per additive term.

    Generalizes scaled_fitness: the tree only has to propose the right
    set of basis terms; their weights (and an intercept) are fit in
    closed form.  Falls back to whole-tree scaling when the term count
    exceeds the cap.
    """
    fit = termwise_fit(tree, X, y)
    if fit is None:
        return scaled_fitness(tree, X, y)
    return fit[2]


def fold_termwise(tree: Expr, X: np.ndarray, y: np.ndarray) -> Expr:
    """Rebuild the tree with its fitted per-term coefficients inlined.

    Duplicate terms are merged and terms (or the intercept) whose fitted
    contribution is negligible are dropped, provided the refit after
    dropping costs no measurable fitness.
    """
    terms = split_terms(tree)
    if len(terms) > MAX_SCALED_TERMS:
        terms = []
    uniq: list[Expr] = []
    cols: list[np.ndarray] = []
    seen: set[Expr] = set()
    ok = bool(terms)
    for t in terms:
        if t in seen:
            continue
        v = eval_tree(t, X)
        if not np.all(np.isfinite(v)):
            ok = False
            break
        seen.add(t)
        # A term that evaluates to a constant column is just an intercept
        # in disguise; leave it to the intercept column.
        if float(np.var(v)) < 1e-20 * (1.0 + float(np.mean(v)) ** 2):
            continue
        uniq.append(t)
        cols.append(v)
    sol = _regress(cols, y, intercept=True) if ok else None
    if sol is None:
        # Whole-tree scalar scaling as the fallback.
        pred = eval_tree(tree, X)
        if not np.all(np.isfinite(pred)):
            return tree
        alpha, beta = linear_fit(pred, y)
        return simplify(
            Binary("+", Binary("*", Const(beta), tree), Const(alpha)))
    coef, f0 = sol
    alpha = float(coef[-1])

    tol = 1e-6 * (float(np.mean(np.abs(y))) + 1e-30)
    keep = [j for j in range(len(uniq))
            if float(np.mean(np.abs(coef[j] * cols[j]))) >= tol]
    drop_alpha = abs(alpha) < tol
    if keep and (len(keep) < len(uniq) or drop_alpha):
        sol2 = _regress([cols[j] for j in keep], y, intercept=not drop_alpha)
        base = float(np.sum(np.abs(y - np.median(y)))) or 1.0
        if sol2 is not None and sol2[1] <= f0 + 1e-6 * base:
            uniq = [uniq[j] for j in keep]
            coef, _ = sol2
            alpha = 0.0 if drop_alpha else float(coef[-1])

    acc: Expr | None = None
    for t, b in zip(uniq, coef):
        piece = Binary("*", Const(float(b)), t)
        acc = piece if acc is None else Binary("+", acc, piece)
    if acc is None:
        return Const(alpha)
    if alpha != 0.0:
        acc = Binary("+", acc, Const(alpha))
    return simplify(acc)


# --- tree navigation -------------------------------------------------------

def all_paths(tree: Expr) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []

    def walk(node: Expr, path: tuple[int, ...]) -> None:
        out.append(path)
        if isinstance(node, Unary):
            walk(node.arg, path + (0,))
        elif isinstance(node, Binary):
            walk(node.left, path + (0,))
            walk(node.right, path + (1,))

    walk(tree, ())
    return out


def get_at(tree: Expr, path: tuple[int, ...]) -> Expr:
    node = tree
    for step in path:
        if isinstance(node, Unary):
            node = node.arg
        elif isinstance(node, Binary):
            node = node.left if step == 0 else node.right
        else:
            raise ValueError("path walks past a leaf")
    return node


def replace_at(tree: Expr, path: tuple[int, ...], new: Expr) -> Expr:
    if not path:
        return new
    step, rest = path[0], path[1:]
    if isinstance(tree, Unary):
        return Unary(tree.op, replace_at(tree.arg, rest, new))
    if isinstance(tree, Binary):
        if step == 0:
            return Binary(tree.op, replace_at(tree.left, rest, new), tree.right)
        return Binary(tree.op, tree.left, replace_at(tree.right, rest, new))
    raise ValueError("path walks past a leaf")


# --- random generation and variation ---------------------------------------

def random_terminal(rng: random.Random, n_features: int,
                    const_range: tuple[float, float]) -> Expr:
    if rng.random() < 0.2:
        return Const(rng.uniform(*const_range))
    return Var(rng.randrange(n_features))


def random_tree(rng: random.Random, n_features: int, cfg: SRConfig,
                max_depth: int, full: bool) -> Expr:
    if max_depth <= 1 or (not full and rng.random() < 0.3):
        return random_terminal(rng, n_features, cfg.const_range)
    if rng.random() < cfg.p_unary:
        return Unary(rng.choice(cfg.unary_ops),
                     random_tree(rng, n_features, cfg, max_depth - 1, full))
    return Binary(rng.choice(BINARY_OPS),
                  random_tree(rng, n_features, cfg, max_depth - 1, full),
                  random_tree(rng, n_features, cfg, max_depth - 1, full))


def crossover(rng: random.Random, a: Expr, b: Expr, max_depth: int) -> Expr:
    """Replace a random subtree of a with a random subtree of b."""
    paths_b = all_paths(b)
    for _ in range(8):
        pa = rng.choice(all_paths(a))
        sub = get_at(b, rng.choice(paths_b))
        child = replace_at(a, pa, sub)
        if depth(child) <= max_depth:
            return child
    return a


def point_mutation(rng: random.Random, tree: Expr, n_features: int,
                   cfg: SRConfig) -> Expr:
    path = rng.choice(all_paths(tree))
    node = get_at(tree, path)
    if isinstance(node, Const):
        new: Expr = Const(node.value + rng.gauss(0.0, 0.1 * (abs(node.value) + 0.01)))
    elif isinstance(node, Var):
        new = Var(rng.randrange(n_features))
    elif isinstance(node, Unary):
        new = Unary(rng.choice(cfg.unary_ops), node.arg)
    else:
        new = Binary(rng.choice(BINARY_OPS), node.left, node.right)
    return replace_at(tree, path, new)


def subtree_mutation(rng: random.Random, tree: Expr, n_features: int,
                     cfg: SRConfig) -> Expr:
    path = rng.choice(all_paths(tree))
    budget = max(1, cfg.max_depth - len(path))
    new = random_tree(rng, n_features, cfg, min(4, budget), full=False)
    return replace_at(tree, path, new)


def hoist_mutation(rng: random.Random, tree: Expr) -> Expr:
    path = rng.choice(all_paths(tree))
    sub = get_at(tree, path)
    inner = get_at(sub, rng.choice(all_paths(sub)))
    return replace_at(tree, path, inner)


def mutate(rng: random.Random, tree: Expr, n_features: int,
           cfg: SRConfig) -> Expr:
    r = rng.random()
    if r < 0.4:
        return point_mutation(rng, tree, n_features, cfg)
    if r < 0.8:
        return subtree_mutation(rng, tree, n_features, cfg)
    return hoist_mutation(rng, tree)


def const_jitter(rng: random.Random, tree: Expr) -> Expr:
    """Perturb every constant in the tree multiplicatively plus a floor."""
    if isinstance(tree, Const):
        return Const(tree.value + rng.gauss(0.0, 0.1 * (abs(tree.value) + 0.01)))
    if isinstance(tree, Var):
        return tree
    if isinstance(tree, Unary):
        return Unary(tree.op, const_jitter(rng, tree.arg))
    return Binary(tree.op, const_jitter(rng, tree.left),
                  const_jitter(rng, tree.right))


# --- constant refinement ----------------------------------------------------

def _line_min(g, c0: float, f0: float, budget: int) -> tuple[float, float]:
    """Pattern line search minimizing g from c0; returns (c, g(c))."""
    best_c, best_f = c0, f0
    step = 0.25 * (abs(c0) + 1e-3)
    evals = 0
    while evals < budget:
        f_plus = g(best_c + step)
        evals += 1
        if f_plus < best_f:
            best_c, best_f = best_c + step, f_plus
            step *= 2.0
            continue
        f_minus = g(best_c - step)
        evals += 1
        if f_minus < best_f:
            best_c, best_f = best_c - step, f_minus
            step *= 2.0
            continue
        step *= 0.3
        if step < 1e-14 * (abs(best_c) + 1e-12):
            break
    return best_c, best_f


def fit_constants(tree: Expr, X: np.ndarray, y: np.ndarray,
                  sweeps: int = 4, budget: int = 80,
                  objective=None) -> tuple[Expr, float]:
    """Coordinate-descent refinement of all constants in the tree.

    The objective defaults to the plain absolute-error fitness; evolve
    passes its own (possibly linearly scaled) objective.  Returns
    (tree, objective value); the value never increases, and a tree
    without constants is returned unchanged.
    """
    if objective is None:
        def objective(t: Expr) -> float:
            return fitness(t, X, y)
    paths = [p for p in all_paths(tree) if isinstance(get_at(tree, p), Const)]
    f_cur = objective(tree)
    if not paths or not math.isfinite(f_cur):
        return tree, f_cur
    current = tree
    for _ in range(max(1, sweeps)):
        f_before = f_cur
        for p in paths:
            c0 = get_at(current, p)
            assert isinstance(c0, Const)

            def g(c: float, _p=p) -> float:
                return objective(replace_at(current, _p, Const(c)))

            c_new, f_new = _line_min(g, c0.value, f_cur, budget)
            if f_new < f_cur:
                current = replace_at(current, p, Const(c_new))
                f_cur = f_new
        if f_before - f_cur <= 1e-12 * max(f_before, 1e-300):
            break
    return current, f_cur


# --- evolution ---------------------------------------------------------------

def evolve(config: SRConfig, X: np.ndarray, y: np.ndarray,
           track_history: bool = False) -> ParetoFront:
    """Run the GP loop on features X (n, d) against target y (n,).

    Returns the final Pareto front with constants refined and members
    simplified.  Fully deterministic for a given (config, X, y).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) and y (n,) with matching n")
    n_features = X.shape[1]
    if n_features < 1:
        raise ValueError("need at least one feature")

    rng = random.Random(config.seed)
    baseline = float(np.sum(np.abs(y - np.median(y))))
    if baseline <= 0.0:
        baseline = max(float(np.sum(np.abs(y))), 1.0)

    if config.linear_scaling:
        def objective(tree: Expr) -> float:
            return termwise_fitness(tree, X, y)
    else:
        def objective(tree: Expr) -> float:
            return fitness(tree, X, y)

    cache: dict[Expr, float] = {}

    def fit_of(tree: Expr) -> float:
        f = cache.get(tree)
        if f is None:
            f = objective(tree)
            cache[tree] = f
        return f

    front = ParetoFront()
    front.baseline = baseline

    # Deterministic basis seeds (every variable and pairwise product)
    # followed by ramped half-and-half for the rest of the population.
    pop: list[Expr] = [Var(i) for i in range(n_features)]
    pop += [Binary("*", Var(i), Var(j))
            for i in range(n_features) for j in range(i, n_features)]
    pop = pop[:config.population_size]
    lo, hi = config.init_depth
    for i in range(config.population_size - len(pop)):
        d = lo + i % (hi - lo + 1)
        pop.append(random_tree(rng, n_features, config, d,
                               full=(i // (hi - lo + 1)) % 2 == 0))
    for t in pop:
        front.update(t, fit_of(t))

    def select() -> Expr:
        best = None
        best_key = None
        for _ in range(config.tournament_size):
            t = pop[rng.randrange(len(pop))]
            key = (fit_of(t), node_count(t))
            if best_key is None or key < best_key:
                best, best_key = t, key
        return best

    elite_n = max(1, int(config.elite_fraction * config.population_size))
    gen = 0
    for gen in range(1, config.generations + 1):
        # Refine constants of the current best structures.
        if config.refine_top > 0:
            for e in sorted(front.entries, key=lambda e: e.fitness)[:config.refine_top]:
                refined, f = fit_constants(e.tree, X, y,
                                           sweeps=config.refine_sweeps,
                                           budget=config.refine_budget,
                                           objective=objective)
                cache[refined] = f
                front.update(refined, f)
        if track_history:
            front.history.append(front.best_fitness)
        if front.best_fitness <= config.early_stop_rel * baseline:
            break

        elites = [e.tree for e in sorted(front.entries,
                                         key=lambda e: e.fitness)[:elite_n]]
        new_pop: list[Expr] = list(elites)
        while len(new_pop) < config.population_size:
            r = rng.random()
            if r < config.p_crossover:
                child = crossover(rng, select(), select(), config.max_depth)
            elif r < config.p_crossover + config.p_mutation:
                child = mutate(rng, select(), n_features, config)
            else:
                child = const_jitter(rng, select())
            new_pop.append(child)
        pop = new_pop
        for t in pop:
            front.update(t, fit_of(t))

    # Final pass: polish constants hard, then simplify.
    finals = list(front.entries)
    for e in finals:
        refined, f = fit_constants(e.tree, X, y,
                                   sweeps=config.final_refine_sweeps,
                                   budget=config.final_refine_budget,
                                   objective=objective)
        front.update(refined, f)
    for e in list(front.entries):
        s = simplify(e.tree)
        if s != e.tree:
            front.update(s, objective(s))
    front.generations_run = gen

    if not config.linear_scaling:
        return front

    # Fold the fitted coefficients into each front member so the returned
    # trees stand alone (their plain fitness matches the scaled fitness
    # they were scored with), then re-rank by the new node counts.
    folded = ParetoFront()
    folded.generations_run = front.generations_run
    folded.baseline = front.baseline
    folded.history = front.history
    for e in front.entries:
        wrapped = fold_termwise(e.tree, X, y)
        folded.update(wrapped, fitness(wrapped, X, y))
    return folded
