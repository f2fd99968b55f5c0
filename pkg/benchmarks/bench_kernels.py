"""Time the numba DSP kernels against their numpy fallbacks.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --seconds 10 --repeat 5 --json out.json
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from v2a import _kernels, dsp  # noqa: E402


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(seconds, rng):
    x = rng.standard_normal(int(seconds * dsp.SAMPLE_RATE))
    for src, dst in ((24000, 10000), (16000, 24000), (48000, 24000)):
        from math import gcd
        g = gcd(src, dst)
        up, down = dst // g, src // g
        h = dsp.resampling_filter(up, down)
        n_in = int(seconds * src)
        out_len = (n_in * up + down // 2) // down
        args = (x[:n_in] if n_in <= len(x) else np.resize(x, n_in), h, up, down, (len(h) - 1) // 2, out_len)
        yield f"polyphase {src}->{dst}", _kernels.polyphase_numba, _kernels.polyphase_numpy, args
    n_frames = int(seconds * dsp.SAMPLE_RATE) // dsp.HOP_SIZE
    frames = rng.standard_normal((n_frames, dsp.FFT_SIZE))
    out_len = (n_frames - 1) * dsp.HOP_SIZE + dsp.FFT_SIZE
    yield "overlap-add 2048/300", _kernels.overlap_add_numba, _kernels.overlap_add_numpy, (frames, dsp.HOP_SIZE, out_len)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seconds", type=float, default=5.0, help="signal length")
    parser.add_argument("--repeat", type=int, default=3, help="timing repeats (best is kept)")
    parser.add_argument("--json", help="write results here")
    args = parser.parse_args()
    if _kernels.polyphase_numba is None:
        sys.exit("numba is not installed")

    rng = np.random.default_rng(0)
    results = []
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, fast, slow, call_args in cases(args.seconds, rng):
        fast(*call_args)  # compile
        a, b = fast(*call_args), slow(*call_args)
        t_fast = best_of(lambda: fast(*call_args), args.repeat)
        t_slow = best_of(lambda: slow(*call_args), args.repeat)
        diff = float(np.max(np.abs(a - b)))
        results.append({"kernel": name, "numba_s": t_fast, "numpy_s": t_slow, "max_abs_diff": diff})
        print(f"{name:<26}{t_fast * 1e3:>10.2f}{t_slow * 1e3:>10.2f}{t_slow / t_fast:>8.1f}x{diff:>12.2e}")
    if args.json:
        Path(args.json).write_text(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
