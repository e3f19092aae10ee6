import pytest

def test_required_dependencies():
    """Test that all required dependencies are installed and can be imported."""
    required_packages = [
        'pandas',
        'numpy',
        'scipy',
        'sqlalchemy',
        'dotenv',
        'hypothesis',
        'imageio'
    ]

    for package in required_packages:
        try:
            __import__(package.replace('-', '_'))
        except ImportError as e:
            pytest.fail(f"Required package '{package}' is not installed: {str(e)}")

def test_cli_imports():
    """Test that all imports in the command-line entry point work."""
    try:
        import numpy as np
        import pandas as pd
        from scipy.ndimage import distance_transform_edt
        from src.cli import main
        from src.solver import solve_mu
        from src.pointwise_attain import pointwise_h
        from src.run_store import RunStore
    except ImportError as e:
        pytest.fail(f"Failed to import required module: {str(e)}")

def test_specific_imports():
    """Test specific imports that might have different import names than package names."""
    try:
        from dotenv import load_dotenv
        from sqlalchemy.orm import declarative_base
        import imageio.v3 as iio
    except ImportError as e:
        pytest.fail(f"Failed to import dotenv, sqlalchemy or imageio: {str(e)}")
