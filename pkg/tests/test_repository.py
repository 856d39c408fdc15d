from src.core.run_repository import RunRepository


def test_save_list_and_get(tmp_path):
    repo = RunRepository(tmp_path / "nested" / "runs.db")
    config = {"pattern": "triangle", "base_model": "gnp", "p": 0.1}
    first = repo.save_run(config, [{"n": 10, "t": 5}])
    second = repo.save_run({**config, "pattern": "star-3"}, [{"n": 10, "t": 5}, {"n": 10, "t": 9}])
    assert second > first

    listing = repo.list_runs()
    assert [row["id"] for row in listing] == [second, first]
    assert listing[0]["pattern"] == "star-3" and listing[0]["row_count"] == 2
    assert repo.list_runs(limit=1, offset=1)[0]["id"] == first

    record = repo.get_run(first)
    assert record["config"] == config
    assert record["rows"] == [{"n": 10, "t": 5}]
    assert repo.get_run(12345) is None
