"""The scripted replay scenario, driven entirely through the CLI.

Run ``python tests/scenario.py --regen`` to rewrite tests/golden after an
intentional format change.
"""

from __future__ import annotations

import io
import sys
from pathlib import Path

from consentledger.cli import dispatch

GOLDEN = Path(__file__).parent / "golden"
ARTIFACTS = ("transcript.txt", "ledger.jsonl", "report.json", "cert.json", "transparency.json")

FORM_V1 = """\
form_id = "signup-v1"
principal = "alice"
fiduciary = "shop"
third_parties = []
[retention]
kind = "FIXED"
days = 365
[[purposes]]
purpose_id = "account_service"
description = "Create and run the customer account"
data_categories = ["name", "email"]
[[purposes]]
purpose_id = "delivery"
description = "Ship orders to the customer"
data_categories = ["name", "postal_address"]
"""

FORM_V2 = """\
form_id = "signup-v2"
principal = "alice"
fiduciary = "shop"
third_parties = []
[retention]
kind = "FIXED"
days = 180
[[purposes]]
purpose_id = "account_service"
description = "Create and run the customer account"
data_categories = ["name", "email"]
"""

AUDIT_CONFIG = """\
fiduciary = "shop"
min_certificate_grade = "B"
"""

PARTIES = [("alice", "PRINCIPAL"), ("shop", "FIDUCIARY"), ("auditor", "AUDITOR"), ("tsa", "TSA")]


def steps(work: Path) -> list[list[str]]:
    p = {name: str(work / name) for name in ("v1.toml", "v2.toml", "audit.toml", "report.json", "cert.json",
                                              "transparency.json")}
    out = [["keys", "generate", "--role", role, "--id", party, "--seed", "replay"] for party, role in PARTIES]
    out += [
        ["consent", "establish", "--form", p["v1.toml"]],
        ["record", "processing", "--actor", "shop", "--consent", "0", "--purpose", "account_service",
         "--categories", "name,email", "--action", "STORE", "--id", "p1"],
        ["record", "processing", "--actor", "shop", "--consent", "0", "--purpose", "account_service",
         "--categories", "email", "--action", "ANALYZE", "--id", "p2"],
        ["record", "processing", "--actor", "shop", "--consent", "0", "--purpose", "delivery",
         "--categories", "name,postal_address", "--action", "ANALYZE", "--id", "p3"],
        ["consent", "modify", "--prior", "0", "--form", p["v2.toml"]],
        ["record", "processing", "--actor", "shop", "--consent", "4", "--purpose", "account_service",
         "--categories", "email", "--action", "ANALYZE", "--id", "p4"],
        ["consent", "withdraw", "--prior", "4", "--reason", "closing account"],
        ["record", "processing", "--actor", "shop", "--consent", "4", "--purpose", "account_service",
         "--categories", "email", "--action", "ANALYZE", "--id", "p5"],
        ["ledger", "verify"],
        ["comply", "check"],
        ["audit", "run", "--config", p["audit.toml"], "--out", p["report.json"]],
        ["audit", "certify", "--report", p["report.json"], "--auditor", "auditor", "--config", p["audit.toml"],
         "--out", p["cert.json"], "--append"],
        ["audit", "verify-cert", "--cert", p["cert.json"], "--report", p["report.json"], "--auditor", "auditor"],
        ["transparency", "export", "--out", p["transparency.json"]],
    ]
    return out


def run(work: Path) -> dict[str, bytes]:
    """Replay the scenario in ``work``; returns the artifacts by name."""
    work.mkdir(parents=True, exist_ok=True)
    (work / "v1.toml").write_text(FORM_V1)
    (work / "v2.toml").write_text(FORM_V2)
    (work / "audit.toml").write_text(AUDIT_CONFIG)
    base = ["--key-dir", str(work / "keys"), "--ledger-file", str(work / "ledger.jsonl")]
    transcript = io.StringIO()
    for n, argv in enumerate(steps(work)):
        now = f"2024-03-01T09:{n:02d}:00Z"
        out, err = io.StringIO(), io.StringIO()
        code = dispatch([*base, "--now", now, *argv], out, err, env={})
        transcript.write(f"$ {' '.join(argv[:2])}\n{out.getvalue()}{err.getvalue()}exit {code}\n")
    artifacts = {"transcript.txt": transcript.getvalue().encode()}
    for name in ARTIFACTS[1:]:
        artifacts[name] = (work / name).read_bytes()
    return artifacts


if __name__ == "__main__" and "--regen" in sys.argv:
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        for name, data in run(Path(tmp)).items():
            (GOLDEN / name).write_bytes(data)
    print(f"rewrote {len(ARTIFACTS)} files in {GOLDEN}")
