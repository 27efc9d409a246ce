#!/usr/bin/env python3
"""Smoke test for the segdelim_py extension module.

Builds nothing itself: run python/build.sh first (or pass the path to an
already-built .so via SEGDELIM_PY_SO).
"""

import json
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def ensure_module():
    here = ROOT / "python" / "segdelim_py.so"
    if not here.exists():
        built = os.environ.get("SEGDELIM_PY_SO")
        candidates = [built] if built else [
            ROOT / "target" / "release" / "libsegdelim_py.so",
            ROOT / "target" / "debug" / "libsegdelim_py.so",
        ]
        for cand in candidates:
            if cand and Path(cand).exists():
                shutil.copy(cand, here)
                break
        else:
            subprocess.run(["bash", str(ROOT / "python" / "build.sh")], check=True)
    sys.path.insert(0, str(here.parent))


ensure_module()
import segdelim_py as sd  # noqa: E402

QUESTION = (
    "Mark has a garden with flowers. He planted plants of three different "
    "colors in it. Ten of them are yellow, and there are 80% more of those in "
    "purple. There are only 25% as many green flowers as there are yellow and "
    "purple flowers. How many flowers does Mark have in his garden?"
)


def main():
    # segmentation reconstructs the text
    sents = sd.sentences(QUESTION)
    assert len(sents) == 5, sents
    assert "".join(sents) == QUESTION
    assert sd.segment(QUESTION)[-1] == len(QUESTION)

    # delimiter insertion and round-trip
    seg = sd.insert_sentence_delimiters(QUESTION)
    assert seg.count("<seg>") == 5
    assert sd.strip_delimiters(seg) == QUESTION

    chunked = sd.insert_fixed_chunks("one two three four five", 2)
    assert chunked.count("<seg>") == 3, chunked
    r1 = sd.insert_random("a b c d e f", 2, seed=7)
    r2 = sd.insert_random("a b c d e f", 2, seed=7)
    assert r1 == r2

    catalog = dict(sd.delimiter_catalog())
    assert catalog["<seg>"] == "structured"
    assert catalog["and"] == "semantic"

    # tokenizer with an atomic special token
    v = sd.Vocabulary()
    v.register_special("<seg>")
    tokens = v.tokenize("Hello <seg> world.")
    assert [t[0] for t in tokens] == ["Hello", "<seg>", "world", "."]
    assert v.id_of("<seg>") is not None

    # prompt assembly, answer extraction, scoring
    exemplars = [(f"Q{i}?", f"A{i}.\n#### {i}") for i in range(8)]
    prompt = sd.build_prompt("gsm8k", QUESTION, exemplars, mode="seg")
    assert prompt.count("Question:") == 9
    assert "<seg>" in prompt

    extracted = sd.extract_answer("So the total is 35.\n#### 35 <seg>", "gsm8k_hash")
    assert extracted == "35"
    assert sd.exact_match(extracted, "35", "gsm8k_hash")
    assert sd.accuracy_pct(13, 20) == 65.0
    assert sd.format_delta(73.92, 81.65) == "+7.73%↑"

    # dataset transformation with the train-config sidecar
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        src = tmp / "data.jsonl"
        dst = tmp / "data-seg.jsonl"
        src.write_text(
            json.dumps(
                {
                    "id": "a",
                    "category": "chat",
                    "prompt": "Say hi. Then wave.",
                    "response": "Hi there. Waving now.",
                }
            )
            + "\n"
        )
        report = sd.transform_sft_dataset(src, dst)
        assert report["read"] == 1 and report["written"] == 1, report
        record = json.loads(dst.read_text())
        assert record["prompt"].count("<seg>") == 2
        assert (tmp / "train_config.json").exists()

        corpus = tmp / "corpus.jsonl"
        corpus.write_text(json.dumps({"text": QUESTION}) + "\n")
        stats = sd.corpus_stats(corpus)
        assert stats["total_sentences"] == 5, stats

    cfg = json.loads(sd.train_config())
    assert cfg["trainer"]["learning_rate"] == 5.0e-06

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
