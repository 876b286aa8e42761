"""Compiled versus numpy kernels on training-sized inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--frames J]

Times nearest-prototype search, assignment accumulation and a full training
step under each available backend, and checks the backends agree bit for bit.
"""
import argparse
import timeit

import numpy as np

from vqprivacy import kernels
from vqprivacy import training as tr
from vqprivacy.synthdata import DatasetSpec, generate


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(J, D, sizes, repeat):
    rng = np.random.default_rng(0)
    h = rng.normal(size=(J, D))
    rows = []
    for V in sizes:
        e = rng.normal(size=(V, D))
        times, outs = {}, {}
        for name in kernels.available_backends():
            kernels.use_backend(name)
            idx, dist = kernels.nearest_prototype(h, e)
            outs[name] = (idx, dist, *kernels.accumulate_assignments(h, idx, V))
            t_q = best_of(lambda: kernels.nearest_prototype(h, e), repeat)
            t_a = best_of(lambda: kernels.accumulate_assignments(h, idx, V), repeat)
            times[name] = (t_q, t_a)
        ref = outs["python"]
        same = all(all(np.array_equal(a, b) for a, b in zip(ref, o)) for o in outs.values())
        rows.append((V, times, same))
    return rows


def bench_step(repeat):
    spec = DatasetSpec(num_train_speakers=0)
    ds = generate(spec)
    batch = ds.sequences[:8]
    out = {}
    for name in kernels.available_backends():
        kernels.use_backend(name)
        model = tr.init_model(ds, tr.TrainConfig(codebook_size=64, seed=0))
        model.codebook = tr._init_codebook(model, batch, np.arange(8))
        out[name] = best_of(lambda: tr.compute_gradients(batch, model), repeat)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--frames", type=int, default=320, help="bottleneck frames per batch")
    args = ap.parse_args()
    default = kernels.backend()
    names = kernels.available_backends()
    print(f"backends: {', '.join(names)} (default {default})")
    if "cython" not in names:
        print("compiled extension not built; only the numpy fallback is timed")

    print(f"\nkernels, J={args.frames} frames, D=16, best of {args.repeat} (ms)")
    print(f"{'V':>5} " + " ".join(f"{n + ' quantize':>16} {n + ' accum':>13}" for n in names)
          + "  identical")
    for V, times, same in bench_kernels(args.frames, 16, (16, 64, 256, 1024), args.repeat):
        cells = " ".join(f"{times[n][0] * 1e3:16.3f} {times[n][1] * 1e3:13.3f}" for n in names)
        print(f"{V:>5} {cells}  {same}")

    print("\nforward+backward of one 8-utterance batch, V=64 (ms)")
    for name, t in bench_step(max(3, args.repeat // 4)).items():
        print(f"  {name:>7}: {t * 1e3:.2f}")
    kernels.use_backend(default)


if __name__ == "__main__":
    main()
