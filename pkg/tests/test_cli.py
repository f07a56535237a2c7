"""Command-line interface: subcommands, formats, and exit codes."""

from __future__ import annotations

import pytest

from ssaas_sim import cli


def run_cli(*argv: str) -> int:
    return cli.main(list(argv))


class TestRun:
    def test_trace_to_stdout(self, capsys):
        code = run_cli("run", "--stage", "0", "--workload", "basic.wl")
        assert code == 0
        out = capsys.readouterr().out
        lines = out.strip().split("\n")
        assert len(lines) == 29
        assert lines[0].split("\t")[2:4] == ["POST", "/api/developers"]

    def test_trace_to_file_and_wire_and_snapshot(self, tmp_path):
        trace = tmp_path / "run.trace"
        wire = tmp_path / "run.wire"
        snap = tmp_path / "run.snap"
        code = run_cli("run", "--stage", "6", "--workload", "basic.wl",
                       "--out", str(trace), "--wire-out", str(wire),
                       "--registry-snapshot", str(snap))
        assert code == 0
        assert len(trace.read_text().strip().split("\n")) == 29
        assert "gateway" in wire.read_text()
        assert any(line.startswith("ChatServices|chatservices-1|")
                   for line in snap.read_text().splitlines())

    def test_ndjson_format_flag(self, tmp_path):
        out = tmp_path / "run.ndjson"
        assert run_cli("run", "--stage", "1", "--workload", "basic.wl",
                       "--format", "ndjson", "--out", str(out)) == 0
        first = out.read_text().split("\n")[0]
        assert first.startswith("{") and '"seq":0' in first

    def test_environment_format_wins(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.FORMAT_ENV, "ndjson")
        out = tmp_path / "run.trace"
        assert run_cli("run", "--stage", "1", "--workload", "basic.wl",
                       "--format", "text", "--out", str(out)) == 0
        assert out.read_text().startswith("{")

    def test_environment_format_must_be_known(self, monkeypatch):
        monkeypatch.setenv(cli.FORMAT_ENV, "xml")
        assert run_cli("run", "--stage", "1", "--workload", "basic.wl") == 64

    def test_reruns_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.trace", tmp_path / "b.trace"
        for path in (a, b):
            assert run_cli("run", "--stage", "5", "--seed", "11",
                           "--workload", "basic.wl", "--out", str(path)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_stage_is_usage_error(self, capsys):
        assert run_cli("run", "--stage", "9", "--workload", "basic.wl") == 64
        assert "unknown stage" in capsys.readouterr().err

    def test_missing_workload_file(self):
        assert run_cli("run", "--stage", "1", "--workload", "nope.wl") == 2

    def test_malformed_workload(self, tmp_path):
        bad = tmp_path / "bad.wl"
        bad.write_text("0|client|GET\n")
        assert run_cli("run", "--stage", "1", "--workload", str(bad)) == 2

    def test_malformed_fault_script(self, tmp_path):
        bad = tmp_path / "bad.fs"
        bad.write_text("40 explode everything\n")
        assert run_cli("run", "--stage", "1", "--workload", "basic.wl",
                       "--faults", str(bad)) == 2

    def test_budget_exhaustion_exit(self, tmp_path):
        assert run_cli("run", "--stage", "1", "--workload", "basic.wl",
                       "--budget", "1") == 3

    def test_usage_error_on_bad_arguments(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("run", "--workload", "basic.wl")
        assert exc.value.code == 64
        with pytest.raises(SystemExit) as exc:
            run_cli("frobnicate")
        assert exc.value.code == 64


class TestDiff:
    def run_to(self, path, *argv):
        assert run_cli("run", "--out", str(path), *argv) == 0

    def test_equal_traces(self, tmp_path, capsys):
        a, b = tmp_path / "a.trace", tmp_path / "b.trace"
        self.run_to(a, "--stage", "0", "--workload", "basic.wl")
        self.run_to(b, "--stage", "6", "--workload", "basic.wl")
        assert run_cli("diff", str(a), str(b)) == 0
        assert capsys.readouterr().out.strip() == "EQUAL"

    def test_mixed_formats_compare_fine(self, tmp_path):
        a, b = tmp_path / "a.trace", tmp_path / "b.ndjson"
        self.run_to(a, "--stage", "2", "--workload", "basic.wl")
        self.run_to(b, "--stage", "3", "--workload", "basic.wl",
                    "--format", "ndjson")
        assert run_cli("diff", str(a), str(b)) == 0

    def test_divergence_exit_and_message(self, tmp_path, capsys):
        a, b = tmp_path / "a.trace", tmp_path / "b.trace"
        self.run_to(a, "--stage", "6", "--workload", "chat_resilience.wl")
        self.run_to(b, "--stage", "6", "--workload", "chat_resilience.wl",
                    "--faults", "faults_kill_chat.fs")
        assert run_cli("diff", str(a), str(b)) == 1
        assert "DIVERGED" in capsys.readouterr().out

    def test_unreadable_trace(self, tmp_path):
        bad = tmp_path / "bad.trace"
        bad.write_text("not\ta\ttrace\n")
        assert run_cli("diff", str(bad), str(bad)) == 65
        assert run_cli("diff", str(tmp_path / "none"), str(bad)) == 65


class TestAuditCommand:
    def test_clean_stage_six_run(self, capsys):
        assert run_cli("audit", "--stage", "6",
                       "--workload", "chat_resilience.wl",
                       "--faults", "faults_kill_chat.fs") == 0
        out = capsys.readouterr().out
        assert "status=OK" in out and "violations=0" in out

    def test_stage_zero_reports_not_applicable(self, capsys):
        assert run_cli("audit", "--stage", "0", "--workload", "basic.wl") == 0
        assert "NOT_APPLICABLE" in capsys.readouterr().out


class TestStagesListing:
    def test_all_stages_listed(self, capsys):
        assert run_cli("stages", "ls") == 0
        out = capsys.readouterr().out
        for stage in range(7):
            assert f"stage {stage}:" in out
        assert "6|chatservices-1|ChatServices|DISCOVERED" in out

    def test_single_stage(self, capsys):
        assert run_cli("stages", "ls", "--stage", "0") == 0
        out = capsys.readouterr().out
        assert "monolith" in out and "stage 1:" not in out

    def test_unknown_stage(self):
        assert run_cli("stages", "ls", "--stage", "12") == 64


class TestRegistryListing:
    def test_prints_snapshot(self, tmp_path, capsys):
        snap = tmp_path / "reg.snap"
        run_cli("run", "--stage", "4", "--workload", "basic.wl",
                "--out", str(tmp_path / "t"), "--registry-snapshot", str(snap))
        capsys.readouterr()
        assert run_cli("registry", "ls", "--snapshot", str(snap)) == 0
        out = capsys.readouterr().out
        assert any(line.startswith("DeveloperData|developerdata-1|")
                   for line in out.splitlines())

    def test_missing_snapshot(self, tmp_path):
        assert run_cli("registry", "ls",
                       "--snapshot", str(tmp_path / "none.snap")) == 66


class TestConfigStoreCommands:
    def test_set_then_get(self, tmp_path, capsys):
        store = str(tmp_path / "conf.ckpt")
        assert run_cli("config", "set", "--store", store, "Gateway", "default",
                       "route.1=/api/x|Svc|1", "breaker.threshold=7") == 0
        capsys.readouterr()
        assert run_cli("config", "get", "--store", store,
                       "Gateway", "default") == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "Gateway|default|1,1"
        assert "route.1=/api/x|Svc|1" in out
        assert "breaker.threshold=7" in out

    def test_set_bumps_version(self, tmp_path, capsys):
        store = str(tmp_path / "conf.ckpt")
        run_cli("config", "set", "--store", store, "Svc", "default", "a=1")
        run_cli("config", "set", "--store", store, "Svc", "default", "a=2")
        capsys.readouterr()
        run_cli("config", "get", "--store", store, "Svc", "default")
        assert capsys.readouterr().out.splitlines()[0] == "Svc|default|2,2"

    def test_get_without_store_file(self, tmp_path):
        assert run_cli("config", "get", "--store", str(tmp_path / "none.ckpt"),
                       "Svc", "default") == 66

    def test_set_rejects_bad_pair_syntax(self, tmp_path):
        assert run_cli("config", "set", "--store", str(tmp_path / "c.ckpt"),
                       "Svc", "default", "justakey") == 64

    def test_set_rejects_forbidden_key_characters(self, tmp_path):
        assert run_cli("config", "set", "--store", str(tmp_path / "c.ckpt"),
                       "Svc", "default", "a,b=1") == 64
