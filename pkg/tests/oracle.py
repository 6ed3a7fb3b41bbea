"""Independent brute-force enumeration oracle used to freeze expected values.

Everything here works on exact Fractions with plain Python loops and never
calls into the package under test: conditional expectations are literal
probability-weighted sums over partition blocks, projections and compensators
are written out from their definitions, and martingale residuals are scanned
block by block.
"""

from fractions import Fraction


def blocks_of(row):
    """Partition row (block id per atom) -> list of atom-index lists."""
    out = {}
    for i, b in enumerate(row):
        out.setdefault(b, []).append(i)
    return list(out.values())


def cond_exp(values, probs, blocks):
    """E[X | partition] as exact Fractions; every block must have mass."""
    out = [None] * len(values)
    for blk in blocks:
        mass = sum(probs[i] for i in blk)
        mean = sum(probs[i] * values[i] for i in blk) / mass
        for i in blk:
            out[i] = mean
    return out


def enlarged_blocks(partitions, tau, n):
    """Blocks of the progressively enlarged partition at time n."""
    out = []
    for blk in blocks_of(partitions[n]):
        cells = {}
        for i in blk:
            key = tau[i] if tau[i] <= n else n + 1
            cells.setdefault(key, []).append(i)
        out.extend(cells.values())
    return out


def survival(probs, partitions, tau):
    """All survival objects by direct enumeration, as Fractions.

    Returns dict with per-(atom, time) lists: D, G, Gt, Dopt, Dpred, m, NG,
    Zbar; times run 0..T.
    """
    T = len(partitions) - 1
    n_atoms = len(probs)
    probs = [Fraction(p) for p in probs]
    rng_t = range(T + 1)

    D = [[Fraction(1) if tau[i] <= n else Fraction(0) for n in rng_t]
         for i in range(n_atoms)]
    G, Gt, Dopt, Dpred = ([[Fraction(0)] * (T + 1) for _ in range(n_atoms)]
                          for _ in range(4))
    for n in rng_t:
        blocks_n = blocks_of(partitions[n])
        alive = cond_exp([Fraction(1) if tau[i] > n else Fraction(0)
                          for i in range(n_atoms)], probs, blocks_n)
        weak = cond_exp([Fraction(1) if tau[i] >= n else Fraction(0)
                         for i in range(n_atoms)], probs, blocks_n)
        dD = [D[i][n] - (D[i][n - 1] if n else Fraction(0)) for i in range(n_atoms)]
        hit_n = cond_exp(dD, probs, blocks_n)
        prev_blocks = blocks_of(partitions[n - 1]) if n else [list(range(n_atoms))]
        hit_pred = cond_exp(dD, probs, prev_blocks)
        for i in range(n_atoms):
            G[i][n] = alive[i]
            Gt[i][n] = weak[i]
            Dopt[i][n] = (Dopt[i][n - 1] if n else Fraction(0)) + hit_n[i]
            Dpred[i][n] = (Dpred[i][n - 1] if n else Fraction(0)) + hit_pred[i]

    m = [[G[i][n] + Dopt[i][n] for n in rng_t] for i in range(n_atoms)]

    NG = [[Fraction(0)] * (T + 1) for _ in range(n_atoms)]
    for i in range(n_atoms):
        NG[i][0] = D[i][0]
    for n in range(1, T + 1):
        for i in range(n_atoms):
            inc = Fraction(0)
            if tau[i] >= n:
                dD = D[i][n] - D[i][n - 1]
                inc = dD - (Dopt[i][n] - Dopt[i][n - 1]) / Gt[i][n]
            NG[i][n] = NG[i][n - 1] + inc

    Zbar = [[Fraction(1)] * (T + 1) for _ in range(n_atoms)]
    for n in range(1, T + 1):
        for i in range(n_atoms):
            prev = G[i][n - 1]
            factor = Gt[i][n] / prev if prev > 0 else Fraction(1)
            Zbar[i][n] = Zbar[i][n - 1] * factor

    return {"D": D, "G": G, "Gt": Gt, "Dopt": Dopt, "Dpred": Dpred,
            "m": m, "NG": NG, "Zbar": Zbar}


def martingale_residual(X, probs, block_rows):
    """Largest |E[dX_n | block at n-1]| over all reachable blocks (Fractions)."""
    probs = [Fraction(p) for p in probs]
    T = len(block_rows) - 1
    worst = Fraction(0)
    for n in range(1, T + 1):
        for blk in blocks_of(block_rows[n - 1]):
            mass = sum(probs[i] for i in blk)
            if mass == 0:
                continue
            mean = sum(probs[i] * (X[i][n] - X[i][n - 1]) for i in blk) / mass
            worst = max(worst, abs(mean))
    return worst
