"""End-to-end smoke test of the phystran extension module."""

import json
import os
import tempfile

import phystran


def main() -> None:
    assert phystran.retained(["align", "contradict"])
    assert not phystran.retained(["align", "contradict", "unknown"])
    mixed = phystran.modulate_smooth(0.25, [4.0, 0.0], [0.0, 4.0])
    assert mixed == [1.0, 3.0], mixed

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "data")
        summary = json.loads(phystran.gen_data(data, per_type=1, seed=2))
        manifest = os.path.join(data, "manifest.jsonl")
        ids = phystran.manifest_ids(manifest)
        assert ids, summary
        print(f"generated {len(ids)} samples")

        model = phystran.Model(seed=0)
        losses = model.train(manifest, "A", 3)
        assert len(losses) == 3 and all(x == x for x in losses)
        ckpt = os.path.join(tmp, "model.safetensors")
        model.save(ckpt)
        model = phystran.Model.load(ckpt)

        with open(manifest) as f:
            source = os.path.join(data, json.loads(f.readline())["source"])
        first, second = os.path.join(tmp, "a.png"), os.path.join(tmp, "b.png")
        for out in (first, second):
            model.edit(source, "drop it", out, seed=1, steps=4)
        with open(first, "rb") as a, open(second, "rb") as b:
            assert a.read() == b.read()
        try:
            model.edit(source, "paint it blue", first)
        except ValueError as e:
            print(f"unsupported instruction rejected: {e}")
        else:
            raise AssertionError("unsupported instruction was accepted")
    print(f"smoke test passed ({model.num_parameters()} parameters)")


if __name__ == "__main__":
    main()
