"""Drive the command line end to end: corpus, ablation grid, lambda sweep.

Uses a reduced configuration (seven training runs, about a minute in total);
the tables land in a temp directory and are printed as they are written.
Expect rough numbers: these runs are far short of convergence."""

import os
import tempfile

from mognet.cli import main

workdir = tempfile.mkdtemp(prefix="mognet-ablate-")
cfg_path = os.path.join(workdir, "small.cfg")
with open(cfg_path, "w") as f:
    f.write("corpus.n_samples = 600\n"
            "model.emb_size = 6\n"
            "model.hidden_size = 10\n"
            "train.epochs = 6\n"
            "train.batch_size = 32\n")

corpus_dir = os.path.join(workdir, "corpus")
assert main(["gen-corpus", "--config", cfg_path, "--out-dir", corpus_dir]) == 0

print("\n== four variants, one seed ==")
code = main(["ablate", "--config", cfg_path, "--corpus", corpus_dir,
             "--out-dir", os.path.join(workdir, "ablation")])
assert code == 0

print("\n== mixing weight sweep ==")
code = main(["lambda-sweep", "--config", cfg_path, "--corpus", corpus_dir,
             "--lambdas", "0,0.5,1", "--out-dir", os.path.join(workdir, "sweep")])
assert code == 0

# lambda 0 and the mognet-gl variant are the same recipe, and the harness is
# deterministic, so the two tables agree to the last bit
import json

ablation = json.load(open(os.path.join(workdir, "ablation", "ablation.json")))
sweep = json.load(open(os.path.join(workdir, "sweep", "sweep.json")))
gl = next(r for r in ablation["rows"] if r["name"] == "mognet-gl")
lam0 = next(r for r in sweep["rows"] if r["lambda"] == 0.0)
print("\nmognet-gl ppl", gl["ppl"], "== lambda-0 ppl", lam0["ppl"], ":",
      gl["ppl"] == lam0["ppl"])

print("artifacts under", workdir)
