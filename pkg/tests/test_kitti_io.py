import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boxdenoise3d import tnsr
from boxdenoise3d.errors import MalformedLine, MalformedMatrix, MissingKey, MissingScore, ParseError
from boxdenoise3d.geom3d import Box2D, Box3D, project_points
from boxdenoise3d.kitti_io import (
    Difficulty,
    LabelRecord,
    assign_difficulty,
    box_to_record,
    parse_calib_file,
    parse_label_file,
    record_to_box,
    write_calib,
    write_predictions,
)

from .oracles import project_dense

CAR_LINE = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"

REAL_CALIB = """P0: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 0.000000000000e+00 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P1: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 -3.875744000000e+02 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P2: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 4.485728000000e+01 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.163791000000e-01 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.745884000000e-03
P3: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 -3.395242000000e+02 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.199936000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.729905000000e-03
R0_rect: 9.999239000000e-01 9.837760000000e-03 -7.445048000000e-03 -9.869795000000e-03 9.999421000000e-01 -4.278459000000e-03 7.402527000000e-03 4.351614000000e-03 9.999631000000e-01
Tr_velo_to_cam: 7.533745000000e-03 -9.999714000000e-01 -6.166020000000e-04 -4.069766000000e-03 1.480249000000e-02 7.280733000000e-04 -9.998902000000e-01 -7.631618000000e-02 9.998621000000e-01 7.523790000000e-03 1.480755000000e-02 -2.717806000000e-01
"""


class TestLabels:
    def test_car_line(self):
        (rec,) = parse_label_file(CAR_LINE + "\n")
        assert rec.type == "Car"
        assert rec.dims == (1.65, 1.67, 3.64)
        assert rec.location == (-0.65, 1.71, 46.70)
        assert rec.bbox2d.y_max == 200.12
        assert rec.yaw == -1.59 and rec.alpha == -1.58
        assert rec.score is None

    def test_empty(self):
        assert parse_label_file("") == []
        assert parse_label_file("\n  \n") == []

    def test_fourteen_fields(self):
        with pytest.raises(MalformedLine) as err:
            parse_label_file("Car 0 0 0 1 1 2 2 1 1 1 0 0\n" + CAR_LINE.rsplit(" ", 1)[0])
        assert err.value.line_no == 1

    def test_non_numeric(self):
        with pytest.raises(MalformedLine):
            parse_label_file(CAR_LINE.replace("1.65", "abc"))

    def test_dont_care_preserved(self):
        recs = parse_label_file("DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n")
        assert recs[0].is_dont_care and recs[0].dims == (-1, -1, -1)

    def test_bottom_center_conversion(self):
        (rec,) = parse_label_file(CAR_LINE)
        box = record_to_box(rec, score=0.9)
        assert box.center.y == pytest.approx(1.71 - 0.825)
        back = box_to_record(box, rec.bbox2d)
        assert back.location[1] == pytest.approx(1.71)


def scored(rec: LabelRecord, s: float) -> LabelRecord:
    from dataclasses import replace

    return replace(rec, score=s)


class TestPredictions:
    def test_roundtrip(self):
        (rec,) = parse_label_file(CAR_LINE)
        text = write_predictions([scored(rec, 0.75)])
        assert len(text.split()) == 16
        (again,) = parse_label_file(text)
        assert again == scored(rec, 0.75)

    def test_empty(self):
        assert write_predictions([]) == ""

    def test_precision(self):
        (rec,) = parse_label_file(CAR_LINE)
        from dataclasses import replace

        text = write_predictions([replace(rec, dims=(1.6500004, 1.67, 3.64), score=0.5)])
        assert parse_label_file(text)[0].dims[0] == pytest.approx(1.6500004, abs=1e-6)

    def test_missing_score(self):
        (rec,) = parse_label_file(CAR_LINE)
        with pytest.raises(MissingScore):
            write_predictions([rec])

    @given(
        st.lists(
            st.tuples(
                st.floats(-50, 50, allow_nan=False),
                st.floats(0.1, 5),
                st.floats(0, 1),
                st.floats(0, 300),
            ),
            max_size=5,
        )
    )
    def test_parse_write_parse_idempotent(self, rows):
        recs = [
            LabelRecord("Car", 0.0, 0, x / 50, Box2D(y2, y2, y2 + 10, y2 + 10), (h, h, h), (x, 1.0, 20.0), 0.1, s)
            for x, h, s, y2 in rows
        ]
        once = parse_label_file(write_predictions(recs))
        twice = parse_label_file(write_predictions(once))
        assert once == twice


class TestCalib:
    def test_synthetic(self):
        cam = parse_calib_file("P2: 100 0 50 0 0 100 50 0 0 0 1 0")
        uv, _ = project_points(cam, [(0, 0, 10)])
        assert tuple(uv[0]) == (50.0, 50.0)

    def test_missing(self):
        with pytest.raises(MissingKey):
            parse_calib_file("P0: 1 0 0 0 0 1 0 0 0 0 1 0")

    def test_malformed(self):
        with pytest.raises(MalformedMatrix):
            parse_calib_file("P2: 1 2 3")
        with pytest.raises(MalformedMatrix):
            parse_calib_file("P2: 1 2 3 4 5 6 7 8 9 10 11 x")

    def test_real_sample(self):
        cam = parse_calib_file(REAL_CALIB)
        P = [[7.215377e02, 0, 6.095593e02, 4.485728e01], [0, 7.215377e02, 1.72854e02, 2.163791e-01], [0, 0, 1, 2.745884e-03]]
        pts = [(-0.65, 1.71 - 0.825, 46.70), (3.0, 1.2, 12.5)]
        uv, _ = project_points(cam, pts)
        np.testing.assert_allclose(uv, project_dense(P, pts), rtol=1e-12)
        # the labelled car from CAR_LINE lands inside its annotated 2D box
        assert 587.01 < uv[0, 0] < 614.12 and 173.33 < uv[0, 1] < 200.12

    def test_write_roundtrip(self):
        cam = parse_calib_file(REAL_CALIB)
        again = parse_calib_file(write_calib(cam))
        np.testing.assert_allclose(again.P, cam.P, rtol=1e-12)


def rec_with(height, occ, trunc):
    return LabelRecord("Car", trunc, occ, 0.0, Box2D(0, 100, 10, 100 + height), (1.5, 1.6, 3.9), (0, 1, 20), 0.0)


class TestDifficulty:
    @pytest.mark.parametrize(
        "height,occ,trunc,want",
        [
            (50, 0, 0.0, Difficulty.EASY),
            (30, 1, 0.2, Difficulty.MODERATE),
            (10, 0, 0.0, Difficulty.IGNORED),
            (40, 0, 0.15, Difficulty.EASY),
            (45, 2, 0.0, Difficulty.HARD),
            (45, 0, 0.4, Difficulty.HARD),
            (45, 3, 0.0, Difficulty.IGNORED),
            (45, 0, 0.6, Difficulty.IGNORED),
        ],
    )
    def test_levels(self, height, occ, trunc, want):
        assert assign_difficulty(rec_with(height, occ, trunc)) == want

    @given(
        st.floats(0, 100), st.integers(0, 3), st.floats(0, 1), st.floats(0, 50), st.integers(0, 3), st.floats(0, 1)
    )
    def test_monotone(self, h, occ, trunc, dh, docc, dtrunc):
        base = assign_difficulty(rec_with(h, occ, trunc))
        relaxed = assign_difficulty(rec_with(h + dh, max(occ - docc, 0), max(trunc - dtrunc, 0.0)))
        assert relaxed <= base


class TestTnsr:
    def test_roundtrip_f32(self):
        a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        assert np.array_equal(tnsr.loads(tnsr.dumps(a)), a)

    def test_header_bytes(self):
        data = tnsr.dumps(np.zeros((2, 5), dtype=np.float32))
        assert data[:4] == b"TNSR"
        assert data[4:8] == (1).to_bytes(4, "little")
        assert data[8] == 0
        assert data[9:13] == (2).to_bytes(4, "little")
        assert data[13:21] == (2).to_bytes(8, "little")
        assert len(data) == 4 + 4 + 1 + 4 + 16 + 40

    def test_f64_and_bad_magic(self):
        a = np.random.default_rng(0).normal(size=(3, 3))
        assert np.array_equal(tnsr.loads(tnsr.dumps(a, "<f8")), a)
        with pytest.raises(ParseError):
            tnsr.loads(b"XXXX" + tnsr.dumps(a)[4:])
        with pytest.raises(ParseError):
            tnsr.loads(tnsr.dumps(a)[:-3])

    def test_multi_record(self, tmp_path):
        import io

        buf = io.BytesIO()
        tnsr.write_tensor(buf, np.ones(3))
        tnsr.write_tensor(buf, np.zeros((2, 2)), "<f8")
        buf.seek(0)
        out = list(tnsr.iter_tensors(buf))
        assert [o.shape for o in out] == [(3,), (2, 2)]
