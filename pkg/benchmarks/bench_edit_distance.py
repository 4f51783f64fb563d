"""Compare the compiled and numpy edit-distance kernels.

    python benchmarks/bench_edit_distance.py --lengths 50,200,800 --pairs 200
"""
import time

import click
import numpy as np

from ppmet import _editpy
from ppmet.simkit import DEFAULT_ALPHABET

try:
    from ppmet import _editcore
except ImportError:  # pragma: no cover
    _editcore = None


def _pairs(length, count, seed):
    rng = np.random.default_rng(seed)
    alpha = np.array(list(DEFAULT_ALPHABET[:50]))
    out = []
    for _ in range(count):
        a = "".join(rng.choice(alpha, size=length))
        b = list(a)
        for i in rng.choice(length, size=max(1, length // 7), replace=False):
            b[i] = rng.choice(alpha)
        out.append((a, "".join(b)))
    return out


def _time(fn, pairs, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for a, b in pairs:
            fn(a, b)
        best = min(best, time.perf_counter() - t0)
    return best / len(pairs)


@click.command()
@click.option("--lengths", default="20,100,400,1600", show_default=True)
@click.option("--pairs", default=100, show_default=True)
@click.option("--repeat", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
def main(lengths, pairs, repeat, seed):
    backends = [("numpy", _editpy.edit_ops)]
    if _editcore is not None:
        backends.insert(0, ("cython", _editcore.edit_ops))
    else:
        click.echo("compiled kernel not built; timing the fallback only", err=True)
    click.echo("length\t" + "\t".join(f"{n}_us" for n, _ in backends) + ("\tspeedup" if len(backends) == 2 else ""))
    for length in (int(x) for x in lengths.split(",")):
        ps = _pairs(length, pairs if length <= 400 else max(5, pairs // 10), seed)
        res = {n: _time(fn, ps, repeat) for n, fn in backends}
        for a, b in ps[:5]:
            assert len({fn(a, b) for _, fn in backends}) == 1
        row = [f"{res[n] * 1e6:.1f}" for n, _ in backends]
        if len(backends) == 2:
            row.append(f"{res['numpy'] / res['cython']:.1f}x")
        click.echo(f"{length}\t" + "\t".join(row))


if __name__ == "__main__":
    main()
