"""Dense-grid sup oracle for the Lipschitz-regularizing sup transform.

For f(x, b, xi) = x * (|b| + |xi|) on the interval (0, 1), the transform

    f_lam(x, b, xi) = sup_x' [ f(x', b, xi) - lam * C * |x - x'| * (1 + |b| + |xi|) ]

is evaluated here by exhaustive search over a dense uniform grid of 10001
candidate points x' in [0, 1] (plus the query point itself). The grid step
1e-4 contains the analytic maximizers of both frozen cases exactly, so the
values below are exact:

  query (x, b, xi) = (0.3, 1.0, 2.0), C = 1:
    * lam = 1.0: penalty slope 4 >= growth slope 3, maximizer x' = x,
      value = f = 0.3 * 3 = 0.9
    * lam = 0.1: penalty slope 0.4 < 3, maximizer x' = 1 (right endpoint),
      value = 3 - 0.4 * 0.7 = 2.72

Run:  python sup_transform_oracle.py
"""


def f(x, b, xi):
    return x * (abs(b) + abs(xi))


def sup_transform(x, b, xi, lam, C, grid):
    scale = lam * C * (1.0 + abs(b) + abs(xi))
    candidates = list(grid) + [x]
    return max(f(xp, b, xi) - scale * abs(x - xp) for xp in candidates)


def main():
    n = 10001
    grid = [i / (n - 1) for i in range(n)]
    x, b, xi = 0.3, 1.0, 2.0

    v_tight = sup_transform(x, b, xi, lam=1.0, C=1.0, grid=grid)
    print(f"lam=1.0: {v_tight!r} (expected 0.9 = f itself)")
    assert abs(v_tight - 0.9) < 1e-15

    v_loose = sup_transform(x, b, xi, lam=0.1, C=1.0, grid=grid)
    print(f"lam=0.1: {v_loose!r} (expected 2.72, attained at x'=1)")
    assert abs(v_loose - 2.72) < 1e-15

    assert v_loose >= v_tight >= f(x, b, xi) - 1e-15
    print("ORACLE VALUES: tight = 0.9, loose = 2.72")


if __name__ == "__main__":
    main()
