"""Plot every series CSV in this directory (needs matplotlib)."""
import csv
import glob
import os
from collections import defaultdict

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
groups = defaultdict(list)
for path in sorted(glob.glob(os.path.join(here, "*.csv"))):
    stem = os.path.splitext(os.path.basename(path))[0]
    groups[stem.split("_")[0]].append(path)

for key, paths in groups.items():
    fig, ax = plt.subplots()
    for path in paths:
        with open(path) as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], [list(map(float, r)) for r in rows[1:]]
        for j in range(1, len(head)):
            if head[j] == "depth":
                continue
            label = os.path.basename(path)[:-4] + ("" if len(head) == 2 else ":" + head[j])
            ax.plot([r[0] for r in body], [r[j] for r in body], label=label)
    ax.set_xlabel("t")
    ax.set_title(key)
    ax.legend()
    fig.savefig(os.path.join(here, key + ".png"), dpi=120)
