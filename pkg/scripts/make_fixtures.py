"""Regenerate the committed test fixtures (toy weights + fixture audio).

The fixtures back the entropy-descent regression test: a small pretrained
two-domain model plus one WAV clip from a shifted domain. Rerun this script
only when the model or front-end changes; commit the results.
"""

import json
import os
import sys
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ttada.adapt import AdaptConfig, adapt
from ttada.dsp import DspConfig, log_mel_spectrogram, read_wav, synth_waveform, write_wav
from ttada.harness import (
    default_benchmark,
    generate_domain,
    pretraining_pairs,
    pretraining_variant,
)
from ttada.model import ClassPromptSet, ModelDims, contrastive_pretrain, save_weights
from ttada.seeding import stable_seed

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures")


def main():
    os.makedirs(FIXTURE_DIR, exist_ok=True)
    dsp = DspConfig()
    tones, chirps = default_benchmark()[:2]
    specs = [
        replace(tones, duration_s=2.0, train_count=8, test_count=4),
        replace(chirps, duration_s=2.0, train_count=8, test_count=4),
    ]
    clean = [
        generate_domain(pretraining_variant(s), dsp, stable_seed(0, "fixture-data"))
        for s in specs
    ]
    pairs = pretraining_pairs(clean)
    w = contrastive_pretrain(
        pairs,
        epochs=300,
        seed=stable_seed(0, "fixture-pretrain"),
        dims=ModelDims(d=32, h=32, audio_bins=dsp.mel_bins),
        lr=2e-2,
    )
    weights_path = os.path.join(FIXTURE_DIR, "toy_weights.ttw")
    save_weights(w, weights_path)

    wave = synth_waveform(specs[0], class_id=2, seed=123)
    wav_path = os.path.join(FIXTURE_DIR, "fixture_audio.wav")
    write_wav(wav_path, wave, specs[0].sample_rate_hz)

    meta = {
        "domain": specs[0].name,
        "class_prompts": list(specs[0].class_prompts),
        "audio_class_id": 2,
    }
    with open(os.path.join(FIXTURE_DIR, "fixture_meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")

    # Sanity: the committed pair must show entropy descent at the reference
    # adaptation settings.
    samples, rate = read_wav(wav_path)
    mel = log_mel_spectrogram(samples, dsp, source_id="fixture")
    classes = ClassPromptSet.build(meta["class_prompts"], w.vocab)
    cfg = AdaptConfig(learning_rate=5e-2, steps=5, num_aug_views=50, seed=0)
    result = adapt([mel], classes, w, cfg)
    trace = [round(s.loss, 6) for s in result.loss_trace]
    print("loss trace:", trace)
    if not result.loss_trace[-1].loss < result.loss_trace[0].loss:
        raise SystemExit("fixture rejected: no entropy descent")
    print(f"fixtures written to {os.path.abspath(FIXTURE_DIR)}")


if __name__ == "__main__":
    main()
