import pytest

from src.interface import SchemaError, emit_plot, read_columns

CSVS = {"lcs_trajectory": "t,lcs\n0,0.1\n1,0.5\n2,nan\n3,0.25\n",
        "sweep_heatmap": "epsilon,steps,mean_psnr\n0.06,500,20.5\n0.08,500,24\n0.06,2000,22\n0.08,2000,27.5\n",
        "ablation_curve": "k,mean_psnr\n1,20\n0.5,22\n0.33,21.5\n"}


def write_csv(tmp_path, name: str, content: str) -> str:
    path = tmp_path / name
    path.write_text(content)
    return str(path)


@pytest.mark.parametrize("kind", list(CSVS))
def emit_plot_is_deterministic_test(tmp_path, kind: str):
    csv_path = write_csv(tmp_path, f"{kind}.csv", CSVS[kind])
    first, second = tmp_path / "first.svg", tmp_path / "second.svg"
    emit_plot(csv_path, kind, str(first))
    emit_plot(csv_path, kind, str(second))
    content = first.read_bytes()
    assert b"<svg" in content
    assert content == second.read_bytes()


@pytest.mark.parametrize("kind", list(CSVS))
def empty_csv_test(tmp_path, kind: str):
    csv_path = write_csv(tmp_path, "empty.csv", CSVS[kind].split("\n")[0] + "\n")
    out = tmp_path / "empty.svg"
    emit_plot(csv_path, kind, str(out))
    assert b"<svg" in out.read_bytes()


def single_row_test(tmp_path):
    csv_path = write_csv(tmp_path, "single.csv", "t,lcs\n0,0.3\n")
    out = tmp_path / "single.svg"
    emit_plot(csv_path, "lcs_trajectory", str(out))
    assert out.exists()


def schema_mismatch_test(tmp_path):
    csv_path = write_csv(tmp_path, "wrong.csv", "t,objective\n0,1\n")
    with pytest.raises(SchemaError, match="lcs"):
        emit_plot(csv_path, "lcs_trajectory", str(tmp_path / "wrong.svg"))
    with pytest.raises(SchemaError, match="epsilon, steps"):
        read_columns(csv_path, "sweep_heatmap")
    with pytest.raises(ValueError):
        read_columns(csv_path, "histogram")
