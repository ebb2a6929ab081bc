"""
Latency of the four modes
=========================

Samples run on the in-process network against a real clock.
"""

import io

import numpy as np

from someipdns import bench
from someipdns.engine import VariantMode

samples = []
for mode in VariantMode:
    samples += bench.run_benchmark(mode, 20, bench.BenchConfig(seed=0))

summary = bench.summarize(samples)
print(bench.format_summary(summary))

# the csv is what the command line tool writes
buf = io.StringIO()
bench.write_csv(samples, buf)
print(buf.getvalue().splitlines()[0])

# the price of authentication, per mode pair
for auth_mode, plain in ((VariantMode.SOMEIP_SD_AUTH, VariantMode.SOMEIP_SD), (VariantMode.DNSSEC_DANE, VariantMode.DNSSEC)):
    a = np.array([s.subscription_latency for s in samples if s.variant is auth_mode])
    p = np.array([s.subscription_latency for s in samples if s.variant is plain])
    print(f"{auth_mode.value}: +{np.median(a) - np.median(p):.3f} ms over {plain.value}")
