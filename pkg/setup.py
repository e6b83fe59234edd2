from setuptools import setup, find_packages

setup(
    name="hardball",
    version="0.1.0",
    description="Two hard balls in a box or torus: event-driven billiard and sufficiency diagnostics",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "pydantic>=2.5.0,<3.0.0",
        "python-dotenv>=1.0.0",
    ],
    entry_points={
        "console_scripts": [
            "hardball=hardball.cli.main:main",
        ],
    },
    python_requires=">=3.10",
)
