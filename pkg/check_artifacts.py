import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from pathlib import Path

from app.services.pipeline_service import RunLayout, output_digest
from app.storage import load_manifest
from app.utils.errors import TricohortError


def verify_digests(out_dir: Path) -> list[str]:
    """Relative paths whose file is missing or whose digest no longer matches the manifest"""
    manifest = load_manifest(RunLayout(out_dir).manifest)
    mismatched = []
    for relative, expected in sorted(manifest.digests.items()):
        path = (out_dir / relative).resolve()
        if not path.exists() or output_digest(path) != expected:
            mismatched.append(relative)
    return mismatched


def check_run(out_dir: Path):
    """Summarize a run manifest and re-verify every recorded digest"""
    try:
        manifest = load_manifest(RunLayout(out_dir).manifest)
    except TricohortError as e:
        print(f"Error: {e}")
        return 1

    print(f"=== RUN {out_dir} ===")
    print(f"Seed: {manifest.config.get('run', {}).get('seed')}")
    print(f"Formats: {', '.join(f'{k}={v}' for k, v in sorted(manifest.formats.items()))}")
    print()

    print("📊 STAGES:")
    for name, record in manifest.stages.items():
        print(f"  {name:<8} {record.seconds:8.2f}s  {len(record.outputs)} outputs")
    print()

    mismatched = verify_digests(out_dir)
    if mismatched:
        print("✗ DIGEST MISMATCHES:")
        for relative in mismatched:
            print(f"  {relative}")
        return 1
    print(f"✅ All {len(manifest.digests)} digests match the files on disk")
    return 0


def check_stage(out_dir: Path, stage: str):
    """List the outputs of one stage with their digests"""
    try:
        manifest = load_manifest(RunLayout(out_dir).manifest)
    except TricohortError as e:
        print(f"Error: {e}")
        return 1
    record = manifest.stages.get(stage)
    if record is None:
        print(f"Stage '{stage}' has not been recorded in {out_dir}.")
        return 1
    print(f"=== STAGE {stage} ({record.seconds:.2f}s) ===")
    for relative in record.outputs:
        print(f"  {relative}  {manifest.digests.get(relative, '-')[:16]}")
    return 0


if __name__ == "__main__":
    if len(sys.argv) > 2:
        sys.exit(check_stage(Path(sys.argv[1]), sys.argv[2]))
    elif len(sys.argv) > 1:
        sys.exit(check_run(Path(sys.argv[1])))
    else:
        sys.exit(check_run(Path("runs/default")))
