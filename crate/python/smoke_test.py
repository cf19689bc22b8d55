"""Smoke test for the Python bindings.

Build the extension first:

    cargo build --release -p bitext-python --features extension-module

then run `python3 python/smoke_test.py`. An installed `bitext` wheel is used
if present, otherwise the freshly built shared library is loaded.
"""

import importlib.util
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_bitext():
    try:
        import bitext

        return bitext
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libbitext.so"
        if lib.exists():
            spec = importlib.util.spec_from_file_location("bitext", lib)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            sys.modules["bitext"] = module
            return module
    sys.exit("bitext extension not found; build it with cargo first")


def main():
    bitext = load_bitext()

    score = bitext.bleu(["a b c d e"], ["a b c d f"])
    assert abs(score["score"] - 66.87) < 0.01, score
    assert bitext.bleu(["x y z u v"], ["x y z u v"])["score"] == 100.0

    refs = ["w1 w2 w3 w4", "w5 w6 w7 w8 w9"]
    same = bitext.paired_significance(refs, refs, refs, trials=200, seed=1)
    assert same["p_value"] == 1.0 and not same["significant"], same

    bpe = bitext.Bpe.learn(["lower lowest low", "newer newest new"], 10)
    assert len(bpe) == 10
    pieces = bpe.segment("lowest newer")
    assert bpe.join(pieces) == ["lowest", "newer"], pieces
    assert bitext.Bpe.parse(bpe.to_text()).to_text() == bpe.to_text()

    cfg = bitext.Config.desk(5).with_overrides(
        [
            ("task.vocab_size", "8"),
            ("task.min_len", "2"),
            ("task.max_len", "4"),
            ("task.train", "40"),
            ("task.mono_src", "30"),
            ("task.mono_trg", "30"),
            ("task.dev", "6"),
            ("task.test", "6"),
            ("model.embed", "6"),
            ("model.hidden", "8"),
            ("model.attention", "6"),
            ("model.max_len", "8"),
            ("train.initial_epochs", "2"),
            ("train.max_epochs", "1"),
            ("wakesleep.iterations", "1"),
            ("eval.beam_width", "2"),
            ("eval.trials", "50"),
        ]
    )
    assert cfg.get("task.vocab_size") == "8"
    assert bitext.Config.parse(cfg.to_text()).to_dict() == cfg.to_dict()
    try:
        cfg.set("no.such.key", "1")
        raise AssertionError("unknown key accepted")
    except bitext.BitextError as e:
        assert str(e).startswith("config:"), e

    task = bitext.Task.generate(cfg)
    src, trg = task.train[0]
    assert task.translate(src) == trg
    assert len(task.mono_src) == 30 and len(task.test) == 6

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        task.write(tmp / "task")
        run = tmp / "run"
        cfg.set("run.dir", str(run))
        out = bitext.run_experiment(cfg)
        assert [m["iteration"] for m in out["metrics"]] == [0, 1]
        assert out["report"] == (run / "report.txt").read_text()

        model = bitext.Model.load(run / "iter1" / "theta.ckpt", tmp / "task" / "vocab.src", tmp / "task" / "vocab.trg")
        assert model.hash == out["theta_hash"]
        lines = [s for s, _ in task.test]
        hyps = model.translate(lines, mode="beam", beam_width=2)
        assert len(hyps) == len(lines)
        assert model.log_prob(lines[0], hyps[0]) <= 0.0
        again = model.translate(lines, mode="sample", seed=3)
        assert again == model.translate(lines, mode="sample", seed=3)

    print("python smoke test passed")


if __name__ == "__main__":
    main()
