"""
Protocol arithmetic on a full-size synthetic manifest
=====================================================

The multi-pose corpus has 229 subjects photographed at 62 head poses,
under 4 attributes and 7 lightings. The evaluation protocol drops the
+45 pitch row (57 poses left), trains on 162 subjects and splits the
other 67 into one gallery image each plus every non-frontal probe.

No images are needed for the counting, so we build records only.
"""

from collections import Counter

from frontalize.dataset import POSES, PROTOCOL_POSES, build_protocol, pose_bin
from frontalize.toy import synthetic_manifest

print(f"{len(POSES)} poses in the rig, {len(PROTOCOL_POSES)} kept for the protocol")

records = synthetic_manifest(229)
print(f"records: {len(records):,}")

split = build_protocol(records, train_subject_count=162, seed=0)
for name, n in split.counts().items():
    print(f"  {name:8s} {n:>9,}")

# each test subject loses all 28 frontal images (4 attributes x 7 lights),
# one of which becomes its gallery entry
print("probes per test subject:", len(split.probes) // len(split.gallery))

# Probes fall into pose bins: yaw sign is merged, pitch sign is not.
bins = Counter(pose_bin(r) for r in split.probes)
print("\nprobes per bin at pitch -15:")
for b in sorted(k for k in bins if k.pitch_deg == -15):
    print(f"  |yaw| {b.abs_yaw_deg:>5g}: {bins[b]}")

# Same seed, same split. A different seed picks other test subjects.
again = build_protocol(records, 162, seed=0)
other = build_protocol(records, 162, seed=1)
print("\nrepeatable:", again.test_subjects == split.test_subjects)
print("seed 1 shares", len(set(other.test_subjects) & set(split.test_subjects)), "of 67 test subjects")
