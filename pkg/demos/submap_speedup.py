"""Relevance scoring against the whole map versus the hash-retrieved submap.

The camera slides along a long corridor, so the map keeps growing while any
one view touches only a few meters of wall.  Scoring a frame against every
component gets slower as the map grows; scoring it against the components
hashed near the frame's points stays roughly constant.  The cumulative
ratio of the two times is the speedup.  The extra grids show how the submap
grows with the hash cell size.

    python3 demos/submap_speedup.py --frames 30
"""
import argparse

from sogmap import synth
from sogmap.bench import format_bench, run_bench, summarize

p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
p.add_argument("--frames", type=int, default=30)
p.add_argument("--repeats", type=int, default=3)
p.add_argument("--alphas", type=float, nargs="*", default=[0.1, 0.2, 0.4, 0.8])
args = p.parse_args()

seq = synth.corridor_sequence(args.frames)
rows = run_bench(seq.frames(), alphas=args.alphas, repeats=args.repeats,
                 on_row=lambda r: print(f"frame {r.frame:>3}: |K| {r.n_components:>5}, |B| {r.n_submap:>3}"))
s = summarize(rows)

print()
print(format_bench(rows))
print()
print(f"final cumulative speedup {s['final_ratio']:.1f}x, never decreasing: {s['ratio_nondecreasing']}")
print(f"relevance agreement between the two paths: min {s['min_agreement']:.4f}, mean {s['mean_agreement']:.4f}")
if s["gate_frame"] is None:
    print(f"the map never reached 20 times the mean submap size ({s['mean_submap']:.1f})")
else:
    print(f"|K| >= 20 * mean|B| from frame {s['gate_frame']}")
for a, b in s.get("mean_submap_by_alpha", {}).items():
    print(f"  alpha {float(a):.1f} m: mean |B| {b:.1f}")
