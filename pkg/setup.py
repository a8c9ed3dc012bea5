from setuptools import setup

setup(
    name="cnn-escape-lab",
    version="0.1.0",
    description="Perturbed gradient descent with noise annealing for the "
                "two-layer non-overlapping CNN teacher/student model.",
    license="GPLv3+",
    python_requires=">=3.7",
    py_modules=[
        "errors", "sphere", "param_types", "run_types", "population",
        "empirical", "optimizer", "analysis", "verifier", "config",
        "trials", "reports", "lab", "run_lab"],
    install_requires=["numpy", "pandas", "scipy"],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["lab = run_lab:main"]})
