import math
import random

import pytest

import nepgpt


def test_param_count_and_perplexity():
    assert nepgpt.param_count() == 98_425_344
    assert nepgpt.param_count(tie_embeddings=False) == 98_425_344 + 16384 * 768
    assert nepgpt.perplexity(3.0820) == pytest.approx(21.80, rel=5e-3)


def test_lr_schedule():
    assert nepgpt.lr_at(714) == pytest.approx(6e-4, rel=1e-12)
    mid = 6e-5 + 0.5 * (6e-4 - 6e-5) * (1 + math.cos(math.pi * (2007 - 715) / 2585))
    assert nepgpt.lr_at(2007) == pytest.approx(mid, rel=1e-9)
    with pytest.raises(nepgpt.NepgptError) as info:
        nepgpt.lr_at(3300)
    assert info.value.code == "StepOutOfRange"


def test_clean_text_is_idempotent():
    raw = "<b>नेपाल</b> is राम्रो देश 2024 http://x.org।"
    once = nepgpt.clean_text(raw)
    assert nepgpt.clean_text(once) == once
    assert "http" not in once and "<b>" not in once
    assert "२०२४" in once
    assert all(nepgpt.is_permitted(ord(c)) for c in once)
    assert "2024" in nepgpt.clean_text(raw, digits="keep")


def test_tokenizer_round_trip(tmp_path):
    rng = random.Random(1)
    words = ["नेपाल", "राम्रो", "देश", "हो", "काठमाडौं", "हिमाल", "पानी", "घर"]
    lines = [" ".join(rng.choice(words) for _ in range(8)) + "।" for _ in range(300)]
    vocab = nepgpt.train_bpe(lines, vocab_size=320, coverage=1.0, seed=2)
    assert len(vocab) == 320
    for line in lines[:50]:
        assert vocab.decode(vocab.encode(line)) == line
    ids = vocab.encode("नेपाल", add_eos=True)
    assert ids[-1] == 3
    assert "".join(vocab.segment("नेपाल")).replace("▁", " ").strip() == "नेपाल"
    path = tmp_path / "v.bpe"
    vocab.save(path)
    again = nepgpt.load_vocab(path)
    assert again.to_bytes() == vocab.to_bytes() == path.read_bytes()
    assert nepgpt.train_bpe(lines, vocab_size=320, coverage=1.0, seed=2).to_bytes() == vocab.to_bytes()


def test_shards_round_trip_and_corruption(tmp_path):
    rng = random.Random(3)
    ids = [rng.randrange(1000) for _ in range(25_000)]
    paths = nepgpt.write_shards(ids, 10_000, tmp_path, 1000)
    assert [nepgpt.verify_shard(p) for p in paths] == [10_000, 10_000, 5_000]
    back = [t for p in nepgpt.list_shards(tmp_path) for t in nepgpt.read_shard(p)]
    assert back == ids
    data = bytearray(paths[0].read_bytes())
    data[100] ^= 1
    paths[0].write_bytes(bytes(data))
    with pytest.raises(nepgpt.NepgptError) as info:
        nepgpt.verify_shard(paths[0])
    assert info.value.code == "CorruptShard"
    assert info.value.exit_code == 2


def test_cli_entry_point():
    code, out, err = nepgpt.run_cli(["no-such-stage"])
    assert code == 1
    assert "UnknownSubcommand" in err
    code, out, _ = nepgpt.run_cli(["--help"])
    assert code == 0 and "self-test" in out
