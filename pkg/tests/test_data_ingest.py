import pytest

from clarify_rank.data_ingest import (
    BadRow,
    ClickSchema,
    EmptyDataset,
    EmptyFile,
    Impression,
    MissingColumn,
    compute_stats,
    group_by_query,
    parse_click,
    parse_click_explore,
    write_click,
)

from conftest import write_click_tsv


def test_parse_single_row(tmp_path):
    path = write_click_tsv(
        tmp_path / "one.tsv",
        [
            {
                "query": "jaguar",
                "question": "what do you mean?",
                "answers": ["the animal", "the car"],
                "impression": "high",
                "engagement": 3,
            }
        ],
    )
    ds = parse_click(path)
    assert len(ds) == 1
    record = ds.records[0]
    assert record.query == "jaguar"
    assert record.answers == ("the animal", "the car")
    assert record.impression is Impression.HIGH
    assert record.engagement == 3
    assert ds.row_indices == (0,)


def test_header_only_file_is_empty(tmp_path):
    path = write_click_tsv(tmp_path / "empty.tsv", [])
    with pytest.raises(EmptyFile):
        parse_click(path)


def test_impression_casing_normalized(tmp_path):
    path = write_click_tsv(
        tmp_path / "case.tsv",
        [
            {"query": "a", "impression": "LOW", "engagement": 1},
            {"query": "b", "impression": "Medium", "engagement": 2},
        ],
    )
    ds = parse_click(path)
    assert [r.impression for r in ds.records] == [Impression.LOW, Impression.MEDIUM]


def test_missing_column(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("query\tquestion\n", encoding="utf-8")
    with pytest.raises(MissingColumn):
        parse_click(path)


@pytest.mark.parametrize(
    "row",
    [
        {"query": "a", "engagement": 11},  # out of range (the 11-class scale stops at 10)
        {"query": "a", "engagement": -1},
        {"query": "a", "impression": "banana", "engagement": 0},
        {"query": "", "engagement": 0},
    ],
)
def test_strict_mode_rejects_bad_rows(tmp_path, row):
    path = write_click_tsv(tmp_path / "bad.tsv", [row, {"query": "ok", "engagement": 0}])
    with pytest.raises(BadRow):
        parse_click(path)


def test_lenient_mode_skips_and_counts(tmp_path):
    path = write_click_tsv(
        tmp_path / "mixed.tsv",
        [
            {"query": "ok1", "engagement": 0},
            {"query": "bad", "engagement": 99},
            {"query": "ok2", "engagement": 5},
        ],
    )
    ds = parse_click(path, strict=False)
    assert len(ds) == 2
    assert ds.n_rejected == 1
    # accepted rows are re-indexed contiguously for embedding alignment
    assert ds.row_indices == (0, 1)


def test_unparsable_engagement_is_bad_row(tmp_path):
    path = write_click_tsv(tmp_path / "nan.tsv", [{"query": "a", "engagement": "three"}])
    with pytest.raises(BadRow):
        parse_click(path)


def test_custom_schema(tmp_path):
    path = tmp_path / "custom.tsv"
    path.write_text(
        "q\tcq\to1\to2\to3\to4\to5\timp\teng\njaguar\twhich one?\tcat\t\t\t\t\thigh\t2\n",
        encoding="utf-8",
    )
    schema = ClickSchema(
        query="q", question="cq", options=("o1", "o2", "o3", "o4", "o5"), impression="imp", engagement="eng"
    )
    ds = parse_click(path, schema)
    assert ds.records[0].answers == ("cat",)


def test_empty_answer_slots_dropped(tmp_path):
    path = write_click_tsv(tmp_path / "short.tsv", [{"query": "a", "answers": ["x"], "engagement": 0}])
    ds = parse_click(path)
    assert ds.records[0].answers == ("x",)


def test_grouping(tmp_path):
    rows = [
        {"query": "a", "engagement": 0},
        {"query": "a", "engagement": 2},
        {"query": "b", "engagement": 0},
    ]
    grouped = parse_click_explore(write_click_tsv(tmp_path / "g.tsv", rows))
    assert len(grouped) == 2
    assert [len(m) for m in grouped.groups.values()] == [2, 1]
    assert list(grouped.groups.keys()) == ["a", "b"]  # first-appearance order
    assert grouped.row_indices["a"] == (0, 1)


def test_grouping_is_partition(explore_tsv):
    grouped = parse_click_explore(explore_tsv)
    sizes = sum(len(m) for m in grouped.groups.values())
    all_indices = [i for ix in grouped.row_indices.values() for i in ix]
    assert sizes == grouped.n_pairs == len(all_indices)
    assert len(set(all_indices)) == len(all_indices)


def test_compute_stats_by_hand(tmp_path):
    rows = [
        {"query": "a", "engagement": 0},
        {"query": "a", "engagement": 2},
        {"query": "b", "engagement": 0},
    ]
    stats = compute_stats(parse_click_explore(write_click_tsv(tmp_path / "s.tsv", rows)))
    assert stats.n_queries == 2
    assert stats.n_pairs == 3
    assert stats.mean_cps_per_query == pytest.approx(1.5)
    assert stats.max_cps_per_query == 2
    assert stats.zero_engagement_fraction == pytest.approx(2 / 3)


def test_compute_stats_single_group(tmp_path):
    stats = compute_stats(
        parse_click_explore(write_click_tsv(tmp_path / "s.tsv", [{"query": "a", "engagement": 1}]))
    )
    assert stats.mean_cps_per_query == 1.0
    assert stats.max_cps_per_query == 1


def test_compute_stats_counts_accepted_rows(explore_tsv):
    grouped = parse_click_explore(explore_tsv)
    n_data_rows = len(explore_tsv.read_text().splitlines()) - 1
    assert compute_stats(grouped).n_pairs == n_data_rows


def test_compute_stats_empty():
    with pytest.raises(EmptyDataset):
        from clarify_rank.data_ingest import GroupedDataset

        compute_stats(GroupedDataset(groups={}, row_indices={}, source="x"))


def test_tsv_round_trip(click_tsv, tmp_path):
    ds = parse_click(click_tsv)
    out = tmp_path / "rt.tsv"
    write_click(ds, out)
    again = parse_click(out)
    assert again.records == ds.records
    assert again.row_indices == ds.row_indices


def test_group_by_query_matches_parse_click_explore(explore_tsv):
    a = parse_click_explore(explore_tsv)
    b = group_by_query(parse_click(explore_tsv))
    assert a.groups == b.groups
    assert a.row_indices == b.row_indices
