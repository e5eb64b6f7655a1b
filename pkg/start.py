import os
import subprocess
import sys

from app.utils.error_handlers import get_error_name

CONFIG = os.getenv("TC_CONFIG", "config.example.ini")


def cli_args(*args):
    command = [sys.executable, "-m", "app.main", *args]
    if os.path.exists(CONFIG):
        command += ["--config", CONFIG]
    return command


def run_generation():
    """Generate the synthetic cohort"""
    print("Generating synthetic cohort...")
    try:
        subprocess.run(cli_args("gen"), check=True)
        print("✓ Cohort generated")
    except subprocess.CalledProcessError as exc:
        print(f"✗ Generation failed: {get_error_name(exc.returncode)} (exit code {exc.returncode})")
        return False
    return True


def run_pipeline():
    """Run every stage after generation"""
    print("Running pipeline...")
    try:
        subprocess.run(cli_args("pipeline", "--no-gen"), check=True)
        print("✓ Pipeline finished")
    except KeyboardInterrupt:
        print("\n✓ Pipeline stopped")
    except subprocess.CalledProcessError as exc:
        print(f"✗ Pipeline failed: {get_error_name(exc.returncode)} (exit code {exc.returncode})")
        sys.exit(exc.returncode)


def main():
    print("=== Tricohort Pipeline ===")
    cohort = os.getenv("TC_COHORT", os.path.join("data", "cohort.csv"))

    if not os.path.exists(cohort):
        print("Cohort not found. Generating synthetic data...")
        if not run_generation():
            sys.exit(1)
    else:
        print("✓ Cohort found")

    print("\nOutputs will be written under the configured out_dir")
    print("  - Run manifest: <out_dir>/manifest.json")
    print("  - Inspect with: python check_artifacts.py <out_dir>")
    print("\nPress Ctrl+C to stop\n")

    run_pipeline()


if __name__ == "__main__":
    main()
