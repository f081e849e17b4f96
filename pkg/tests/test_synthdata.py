"""Synthetic domains with known alignment ground truth."""

import json

import numpy as np
import pytest

from irwgan.core import load_dataset
from irwgan.errors import ConfigError, DatasetError
from irwgan.synthdata import (
    PRESETS,
    Content,
    GenSpec,
    Style,
    SynthSpec,
    load_synth_spec,
    make_unaligned_pair,
    materialize,
    region_features,
    render,
    render_many,
    separability_probe,
    synth_experiment_config,
)


class TestRender:
    @pytest.mark.parametrize("content", list(Content))
    def test_pure_and_in_range(self, content):
        spec = GenSpec(content=content)
        a, b = render(spec, 17), render(spec, 17)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (16, 16, 1)
        assert a.min() >= -1.0 and a.max() <= 1.0

    def test_seed_changes_pose(self):
        spec = GenSpec(content=Content.ELLIPSE)
        assert not np.array_equal(render(spec, 1), render(spec, 2))

    def test_style_y_without_texture_is_negation(self):
        x = render(GenSpec(content=Content.CROSS, style=Style.X), 5)
        y = render(GenSpec(content=Content.CROSS, style=Style.Y, texture=0.0), 5)
        np.testing.assert_array_equal(y, -x)

    def test_render_many_names(self):
        ds = render_many(GenSpec(content=Content.BLOB), np.array([3, 4]), "blobs")
        assert len(ds) == 2
        assert ds.filenames[0] == f"blob_{3:020d}.png"


class TestUnalignedPair:
    def test_counts(self):
        x, y = make_unaligned_pair(
            Content.ELLIPSE, Content.CROSS, Content.STRIPES, sizes=(200, 200), ratios=(0.5, 0.5), seed=0
        )
        for ds in (x, y):
            assert len(ds) == 300
            assert ds.label_counts() == {"aligned": 200, "unaligned": 100, "unlabeled": 0}
        assert (x.name, y.name) == ("X", "Y")

    def test_ratio_zero_is_fully_aligned(self):
        x, y = make_unaligned_pair(
            Content.ELLIPSE, Content.CROSS, Content.STRIPES, sizes=(20, 15), ratios=(0.0, 0.0), seed=1
        )
        assert len(x) == 20 and len(y) == 15
        assert x.labels.all() and y.labels.all()

    def test_contaminant_must_differ(self):
        with pytest.raises(DatasetError):
            make_unaligned_pair(
                Content.ELLIPSE, Content.ELLIPSE, Content.STRIPES, sizes=(4, 4), ratios=(0.5, 0.5), seed=0
            )

    def test_seeded(self):
        args = (Content.ELLIPSE, Content.CROSS, Content.STRIPES, (10, 10), (0.5, 0.5), 7)
        a, b = make_unaligned_pair(*args)[0], make_unaligned_pair(*args)[0]
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_domains_are_unpaired(self):
        x, y = make_unaligned_pair(
            Content.ELLIPSE, Content.CROSS, Content.STRIPES, sizes=(10, 10), ratios=(0.0, 0.0), seed=2,
            spec=SynthSpec(texture=0.0),
        )
        # with no texture a paired sample would be an exact negation
        assert not np.array_equal(np.sort(y.samples, axis=0), np.sort(-x.samples, axis=0))


class TestSeparability:
    def test_region_features_shape(self):
        assert region_features(np.zeros((5, 16, 16, 1))).shape == (5, 2)

    def test_aligned_and_contaminant_content_are_separable(self):
        seeds = np.arange(100)
        aligned = render_many(GenSpec(content=Content.ELLIPSE), seeds, "a").samples
        contaminant = render_many(GenSpec(content=Content.CROSS), seeds + 1000, "c").samples
        assert separability_probe(aligned, contaminant) >= 0.95


class TestPresetsAndFiles:
    def test_known_presets(self):
        assert set(PRESETS) >= {"default", "tiny"}
        assert load_synth_spec("tiny").sizes == (12, 12)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_synth_spec("no-such-preset")

    def test_materialize_layout(self, tmp_path):
        spec = SynthSpec(sizes=(6, 6), ratios=(0.5, 0.5), seed=4)
        x, y = materialize(spec, tmp_path)

        assert len(list((tmp_path / "X").glob("*.png"))) == len(x) == 9
        assert len(list((tmp_path / "Y").glob("*.png"))) == len(y) == 9
        lines = (tmp_path / "labels_X.csv").read_text().splitlines()
        assert sum(line.endswith(",0") for line in lines) == 3

        assert load_synth_spec(str(tmp_path / "synth.json")) == spec
        reloaded = load_dataset(str(tmp_path / "X"), 16, str(tmp_path / "labels_X.csv"))
        assert reloaded.label_counts()["unaligned"] == 3

    def test_synth_json_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "synth.json"
        path.write_text(json.dumps({"sizes": [4, 4], "colour": "red"}))
        with pytest.raises(ConfigError):
            load_synth_spec(str(path))

    def test_experiment_config_matches_pair(self):
        config = synth_experiment_config(PRESETS["tiny"], epochs=3, decay_start_epoch=2)
        assert (config.resolution, config.channels) == (16, 1)
        assert config.epochs == 3
