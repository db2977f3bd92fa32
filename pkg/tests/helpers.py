"""Shared fixtures-in-spirit: a tiny two-domain benchmark for fast tests."""

from ttada.harness import ClassRecipe, SyntheticDomainSpec


def tiny_specs():
    beeps = SyntheticDomainSpec(
        name="beeps",
        class_recipes=(
            ClassRecipe("low beep", "tone", {"freq": 300.0, "jitter": 0.05}),
            ClassRecipe("high beep", "tone", {"freq": 1500.0, "jitter": 0.05}),
        ),
        noise_level=0.05,
        duration_s=0.6,
        train_count=4,
        test_count=8,
    )
    sweeps = SyntheticDomainSpec(
        name="sweeps",
        class_recipes=(
            ClassRecipe("rising sweep", "chirp", {"f0": 300.0, "f1": 2000.0}),
            ClassRecipe("falling sweep", "chirp", {"f0": 2000.0, "f1": 300.0}),
        ),
        noise_level=0.05,
        eq_tilt_db_per_octave=3.0,
        duration_s=0.6,
        train_count=4,
        test_count=8,
    )
    return (beeps, sweeps)
