import numpy as np
import pytest
import torch

from diffpaint.renderer import (
    StrokeParams,
    StrokeSet,
    composite,
    coverage_fraction,
    empty_canvas,
    load_brush_template,
    rasterize_stroke,
    render_batch,
    render_sequence,
    stroke_mask,
)
from reference import ref_composite, ref_mask


def make_stroke(**overrides):
    base = dict(x=0.5, y=0.5, h=0.4, w=0.3, theta=0.0, r=0.8, g=0.2, b=0.1)
    base.update(overrides)
    return StrokeParams(**base)


class TestStrokeParams:
    def test_slot_order(self):
        s = StrokeParams(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
        assert s.as_tuple() == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
        assert torch.equal(s.as_tensor(), torch.tensor([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]))

    @pytest.mark.parametrize(
        "bad",
        [
            dict(x=-0.1),
            dict(y=1.5),
            dict(h=0.0),
            dict(w=-0.2),
            dict(theta=1.0),
            dict(r=2.0),
            dict(x=float("nan")),
            dict(h=float("inf")),
        ],
    )
    def test_rejects_out_of_domain(self, bad):
        with pytest.raises(ValueError):
            make_stroke(**bad)

    def test_tensor_round_trip(self):
        s = make_stroke(theta=0.37)
        back = StrokeParams.from_tensor(s.as_tensor())
        assert back.as_tuple() == pytest.approx(s.as_tuple(), abs=1e-7)


class TestStrokeMask:
    def test_interior_is_opaque_exterior_transparent(self):
        s = make_stroke(x=0.5, y=0.5, h=0.6, w=0.6, theta=0.0)
        mask = stroke_mask(s.as_tensor(), 64)
        # |u|,|v| <= 0.7 is comfortably inside the soft edge
        inside = mask[24:40, 24:40]
        assert inside.min() > 0.99
        assert mask[0, 0] < 0.01
        assert mask[0, 63] < 0.01

    def test_binarized_area_matches_rectangle(self):
        # binarizing at 0.5 recovers the nominal w x h support
        s = make_stroke(x=0.5, y=0.5, h=0.5, w=0.25, theta=0.0)
        mask = stroke_mask(s.as_tensor(), 128)
        area = (mask >= 0.5).float().mean().item()
        assert abs(area - 0.5 * 0.25) < 0.01

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            params = [
                rng.uniform(0, 1),
                rng.uniform(0, 1),
                rng.uniform(0.1, 0.9),
                rng.uniform(0.1, 0.9),
                rng.uniform(0, 1),
                0.5,
                0.5,
                0.5,
            ]
            want = ref_mask(params, 32)
            exact = stroke_mask(torch.tensor(params, dtype=torch.float64), 32).numpy()
            assert np.abs(exact - want).max() < 1e-12
            # float32 differs only by rounding amplified through the sigmoid edge
            single = stroke_mask(torch.tensor(params, dtype=torch.float32), 32).numpy()
            assert np.abs(single - want).max() < 5e-6

    def test_rotation_half_turn_swaps_axes(self):
        a = stroke_mask(make_stroke(h=0.5, w=0.2, theta=0.0).as_tensor(), 64)
        b = stroke_mask(make_stroke(h=0.2, w=0.5, theta=0.5).as_tensor(), 64)
        assert (a - b).abs().max() < 1e-5

    def test_out_of_frame_stroke_clips(self):
        s = make_stroke(x=0.02, y=0.5, w=0.6)
        mask = stroke_mask(s.as_tensor(), 32)
        assert mask.shape == (32, 32)
        assert mask.max() > 0.9  # part still lands inside

    def test_batched_shapes(self):
        params = torch.rand(4, 5, 8) * 0.8 + 0.1
        mask = stroke_mask(params, 16)
        assert mask.shape == (4, 5, 16, 16)

    def test_rejects_bad_params(self):
        s = make_stroke().as_tensor()
        bad = s.clone()
        bad[2] = 0.0
        with pytest.raises(ValueError):
            stroke_mask(bad, 32)
        bad = s.clone()
        bad[0] = float("nan")
        with pytest.raises(ValueError):
            stroke_mask(bad, 32)
        with pytest.raises(ValueError):
            stroke_mask(s, 4)  # below minimum render size


class TestTemplate:
    def test_solid_template_tracks_procedural_support(self):
        s = make_stroke(theta=0.2)
        solid = torch.ones(16, 16)
        with_template = stroke_mask(s.as_tensor(), 64, template=solid)
        procedural = stroke_mask(s.as_tensor(), 64)
        hard = procedural >= 0.5
        # inside the nominal rectangle a solid template is fully opaque
        assert with_template[hard].min() > 0.45  # grid_sample feathers the border bilinearly
        assert with_template[procedural < 0.01].max() < 0.6

    def test_load_template_png(self, tmp_path):
        from PIL import Image

        arr = (np.linspace(0, 255, 64).reshape(8, 8)).astype(np.uint8)
        path = tmp_path / "brush.png"
        Image.fromarray(arr, mode="L").save(path)
        loaded = load_brush_template(path)
        assert loaded.shape == (8, 8)
        assert loaded.min() >= 0 and loaded.max() <= 1
        assert abs(loaded[0, 0].item() - 0.0) < 1e-6


class TestComposite:
    def test_matches_reference(self):
        # end-to-end in float64 against the fully independent oracle
        rng = np.random.default_rng(3)
        for _ in range(25):
            canvas = torch.tensor(rng.uniform(0, 1, size=(3, 32, 32)))
            params = [
                rng.uniform(0, 1),
                rng.uniform(0, 1),
                rng.uniform(0.1, 0.8),
                rng.uniform(0.1, 0.8),
                rng.uniform(0, 1),
                rng.uniform(0, 1),
                rng.uniform(0, 1),
                rng.uniform(0, 1),
            ]
            conf = float(rng.uniform(0, 1))
            rendered = rasterize_stroke(torch.tensor(params, dtype=torch.float64), 32)
            got = composite(canvas, rendered, conf).numpy()
            want = ref_composite(canvas.numpy(), params[5:8], ref_mask(params, 32), conf)
            assert np.abs(got - want).max() < 1e-12

    def test_float32_blend_matches_scalar_blend(self):
        # the compositing arithmetic itself, float32 tensors vs float64
        # scalar math on the same rendered mask
        rng = np.random.default_rng(4)
        for _ in range(25):
            canvas = torch.rand(3, 24, 24, generator=torch.Generator().manual_seed(int(rng.integers(1 << 31))))
            params = torch.tensor(
                [
                    rng.uniform(0, 1),
                    rng.uniform(0, 1),
                    rng.uniform(0.1, 0.8),
                    rng.uniform(0.1, 0.8),
                    rng.uniform(0, 1),
                    rng.uniform(0, 1),
                    rng.uniform(0, 1),
                    rng.uniform(0, 1),
                ],
                dtype=torch.float32,
            )
            conf = float(rng.uniform(0, 1))
            rendered = rasterize_stroke(params, 24)
            got = composite(canvas, rendered, conf).numpy()
            want = ref_composite(canvas.numpy(), params[5:8].tolist(), rendered.mask.numpy(), conf)
            assert np.abs(got - want).max() < 1e-6

    def test_zero_confidence_is_identity(self):
        canvas = torch.rand(3, 32, 32)
        rendered = rasterize_stroke(make_stroke(), 32)
        assert torch.equal(composite(canvas, rendered, 0.0), canvas)

    def test_full_confidence_paints_color_at_center(self):
        canvas = empty_canvas(64, fill=0.0)
        s = make_stroke(r=0.9, g=0.4, b=0.2)
        out = composite(canvas, rasterize_stroke(s, 64), 1.0)
        center = out[:, 32, 32]
        assert torch.allclose(center, torch.tensor([0.9, 0.4, 0.2]), atol=1e-3)

    def test_output_stays_in_range(self):
        canvas = torch.ones(3, 32, 32)
        out = composite(canvas, rasterize_stroke(make_stroke(r=1.0, g=1.0, b=1.0), 32), 1.0)
        assert out.max() <= 1.0 and out.min() >= 0.0

    def test_shape_mismatch_rejected(self):
        canvas = torch.rand(3, 32, 32)
        rendered = rasterize_stroke(make_stroke(), 16)
        with pytest.raises(ValueError):
            composite(canvas, rendered, 1.0)


class TestSequencesAndBatches:
    def test_empty_sequence_returns_canvas(self):
        canvas = torch.rand(3, 32, 32)
        strokes = StrokeSet(torch.zeros(0, 8), torch.zeros(0))
        assert torch.equal(render_sequence(canvas, strokes), canvas)

    def test_later_strokes_occlude(self):
        canvas = empty_canvas(64, fill=0.0)
        first = make_stroke(r=1.0, g=0.0, b=0.0)
        second = make_stroke(r=0.0, g=1.0, b=0.0)
        params = torch.stack([first.as_tensor(), second.as_tensor()])
        out = render_sequence(canvas, StrokeSet(params, torch.ones(2)))
        assert out[1, 32, 32] > 0.95  # green wins at the shared center
        assert out[0, 32, 32] < 0.05

    def test_batch_matches_sequential_bitwise(self):
        gen = torch.Generator().manual_seed(5)
        canvas = torch.rand(3, 3, 32, 32, generator=gen)
        params = torch.rand(3, 6, 8, generator=gen) * 0.8 + 0.1
        confs = (torch.rand(3, 6, generator=gen) > 0.3).float()
        batched = render_batch(canvas, params, confs)
        for b in range(3):
            single = render_sequence(canvas[b], StrokeSet(params[b], confs[b]))
            assert torch.equal(batched[b], single)

    def test_gradients_reach_all_parameters(self):
        params = (torch.rand(8) * 0.5 + 0.25).requires_grad_(True)
        canvas = empty_canvas(32, fill=0.0)
        out = composite(canvas, rasterize_stroke(params, 32), 1.0)
        out.sum().backward()
        assert params.grad is not None
        assert torch.isfinite(params.grad).all()
        assert (params.grad.abs() > 0).sum() >= 7  # theta may sit at a symmetric point


class TestCoverage:
    def test_disjoint_masks(self):
        a = torch.zeros(16, 16)
        a[:4, :4] = 1.0
        b = torch.zeros(16, 16)
        b[8:, 8:] = 1.0
        assert coverage_fraction(a, b) == 0.0

    def test_identical_masks(self):
        a = torch.zeros(16, 16)
        a[2:10, 2:10] = 1.0
        assert coverage_fraction(a, a) == 1.0

    def test_empty_new_mask(self):
        assert coverage_fraction(torch.zeros(8, 8), torch.ones(8, 8)) == 0.0

    def test_partial(self):
        new = torch.zeros(10, 10)
        new[0:4, 0:10] = 1.0  # 40 px
        acc = torch.zeros(10, 10)
        acc[0:2, 0:10] = 1.0  # covers 20 of them
        assert coverage_fraction(new, acc) == pytest.approx(0.5)
