import numpy as np
import pytest

from precipnet.data import (CoincidenceRecord, PrecipDatabase, PrecipLabel,
                            SurfaceClass, csv_header, load_database,
                            save_database, split_database)
from precipnet.errors import ConfigError, ParseError, SchemaError, ValidationError
from precipnet.synthetic import SyntheticConfig, generate_synthetic

from conftest import make_db


def write_csv(path, rows, n_channels=13):
    lines = [",".join(csv_header(n_channels))]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def csv_row(label="rain", rate=1.5, surface="ocean", source="dpr", tb=200.0, lat=10.0):
    return [tb] * 13 + [0.1, 0.05, 30.0, 500.0, 290.0, surface, label, rate, lat, 20.0, source]


class TestLoadDatabase:
    def test_three_rows_in_order(self, tmp_path):
        path = tmp_path / "db.csv"
        write_csv(path, [csv_row(lat=1.0), csv_row(label="none", rate=0.0, lat=2.0),
                         csv_row(label="snow", rate=0.3, lat=3.0)])
        db = load_database(path)
        assert len(db) == 3
        assert db.n_channels == 13
        assert list(db.lat) == [1.0, 2.0, 3.0]
        assert list(db.label) == [PrecipLabel.RAIN, PrecipLabel.NONE, PrecipLabel.SNOW]

    def test_rate_with_none_label_rejected(self, tmp_path):
        path = tmp_path / "db.csv"
        write_csv(path, [csv_row(label="none", rate=0.5)])
        with pytest.raises(ValidationError) as exc:
            load_database(path)
        assert exc.value.field == "rate"

    def test_malformed_row_reports_row_number(self, tmp_path):
        path = tmp_path / "db.csv"
        write_csv(path, [csv_row(), csv_row(tb="warm")])
        with pytest.raises(ParseError) as exc:
            load_database(path)
        assert exc.value.row == 3

    def test_unknown_enum_is_parse_error(self, tmp_path):
        path = tmp_path / "db.csv"
        write_csv(path, [csv_row(surface="glacier")])
        with pytest.raises(ParseError):
            load_database(path)

    def test_mixed_source_is_schema_error(self, tmp_path):
        path = tmp_path / "db.csv"
        write_csv(path, [csv_row(source="dpr"), csv_row(source="cpr")])
        with pytest.raises(SchemaError):
            load_database(path)

    def test_mixed_surface_is_schema_error_unless_allowed(self, tmp_path):
        path = tmp_path / "db.csv"
        write_csv(path, [csv_row(surface="ocean"), csv_row(surface="land")])
        with pytest.raises(SchemaError):
            load_database(path)
        assert len(load_database(path, allow_mixed_surface=True)) == 2

    def test_tb_out_of_range(self, tmp_path):
        path = tmp_path / "db.csv"
        write_csv(path, [csv_row(tb=20.0)])
        with pytest.raises(ValidationError) as exc:
            load_database(path)
        assert exc.value.field == "tb"

    def test_channel_count_from_header(self, tmp_path):
        db = make_db(5, n_channels=4)
        save_database(db, tmp_path / "db.csv")
        assert load_database(tmp_path / "db.csv").n_channels == 4

    def test_truncated_binary(self, tmp_path):
        db = make_db(5)
        save_database(db, tmp_path / "db.bin")
        raw = (tmp_path / "db.bin").read_bytes()
        (tmp_path / "cut.bin").write_bytes(raw[:-7])
        with pytest.raises(ParseError):
            load_database(tmp_path / "cut.bin")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ParseError):
            load_database(tmp_path / "x.bin")


class TestRoundTrip:
    @pytest.mark.parametrize("fmt", ["csv", "binary"])
    def test_synthetic_1000_bit_identical(self, tmp_path, fmt):
        db = generate_synthetic(SyntheticConfig(n_records=1000, seed=5)).filter_surface(
            SurfaceClass.OCEAN)
        path = tmp_path / f"db.{'csv' if fmt == 'csv' else 'bin'}"
        save_database(db, path, fmt)
        back = load_database(path, fmt)
        # field-by-field comparison of the records, floats by bit pattern
        for a, b in zip(db.records, back.records):
            assert a.surface == b.surface and a.label == b.label and a.source == b.source
            for x, y in zip(a.tb + a.ancillary.as_tuple() + (a.rate, a.lat, a.lon),
                            b.tb + b.ancillary.as_tuple() + (b.rate, b.lat, b.lon)):
                assert np.float64(x).tobytes() == np.float64(y).tobytes()
        assert back == db

    def test_binary_files_are_byte_stable(self, tmp_path):
        db = make_db(20)
        save_database(db, tmp_path / "a.bin")
        save_database(load_database(tmp_path / "a.bin"), tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_empty_database(self, tmp_path):
        db = PrecipDatabase.from_records([], n_channels=13)
        save_database(db, tmp_path / "e.csv")
        back = load_database(tmp_path / "e.csv")
        assert len(back) == 0 and back.n_channels == 13


class TestDatabase:
    def test_arrays_are_read_only(self, small_db):
        with pytest.raises(ValueError):
            small_db.rate[0] = 1.0

    def test_record_access(self, small_db):
        rec = small_db[3]
        assert isinstance(rec, CoincidenceRecord)
        assert rec.tb == tuple(small_db.tb[3])
        assert PrecipDatabase.from_records(small_db.records) == small_db

    def test_stratify_closure(self, synthetic_10k):
        parts = synthetic_10k.stratify()
        assert sum(len(p) for p in parts.values()) == len(synthetic_10k)
        for surface, part in parts.items():
            assert np.all(part.surface == surface)
            assert part.surface_class == surface

    def test_invariant_rate_iff_label(self):
        with pytest.raises(ValidationError):
            make_db(labels=[2]).__class__(
                np.full((1, 13), 200.0), [[0, 0, 1, 0, 280]], [0], [2], [0.0],
                [0], [0], [0])


class TestSplit:
    def test_paper_fractions(self):
        train, val, test = split_database(make_db(100), (0.7, 0.15, 0.15), seed=1)
        assert (len(train), len(val), len(test)) == (70, 15, 15)

    def test_floor_arithmetic(self):
        sizes = [len(p) for p in split_database(make_db(10), (0.8, 0.1, 0.1), seed=0)]
        assert sizes == [8, 1, 1]

    def test_remainder_to_train(self):
        sizes = [len(p) for p in split_database(make_db(11), (0.7, 0.15, 0.15), seed=0)]
        assert sizes == [11 - 1 - 1, 1, 1]

    @pytest.mark.parametrize("fractions", [(1.0, 0.0, 0.0), (0.7, 0.2, 0.2), (0.5, 0.5)])
    def test_bad_fractions(self, fractions):
        with pytest.raises(ConfigError):
            split_database(make_db(10), fractions)

    def test_near_zero_fraction_rejected_sum(self):
        eps = 1e-12
        with pytest.raises(ConfigError):
            split_database(make_db(10), (1.0, eps, eps + 1e-8))

    def test_partition_and_determinism(self):
        db = make_db(200, seed=4)
        parts = split_database(db, seed=9)
        again = split_database(db, seed=9)
        other = split_database(db, seed=10)
        assert all(a == b for a, b in zip(parts, again))
        assert [len(p) for p in other] == [len(p) for p in parts]
        assert not parts[0] == other[0]
        # lat values are unique per record, so they identify rows
        ids = [set(p.lat.tolist()) for p in parts]
        assert ids[0].isdisjoint(ids[1]) and ids[1].isdisjoint(ids[2])
        assert ids[0] | ids[1] | ids[2] == set(db.lat.tolist())
