from setuptools import setup, find_packages

setup(
    name="nee",
    version="0.1.0",
    packages=find_packages(include=["nee", "nee.*"]),
    install_requires=[
        "numpy>=1.24.0",
        "networkx>=3.0",
        "pyyaml>=6.0.0",
        "pydantic>=2.3.0"
    ],
    extras_require={
        "test": [
            "pytest>=7.0.0",
            "coverage>=6.0.0"
        ]
    },
    entry_points={
        "console_scripts": [
            "nee=nee.cli:main"
        ]
    }
)
