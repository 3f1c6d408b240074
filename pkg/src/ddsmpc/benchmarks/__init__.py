"""Benchmark plants, weather data and study drivers."""
from .plants import (building_comfort_profile, building_model, building_spec,
                     two_mass_spring_model, two_mass_spring_spec)
from .studies import (BenchmarkConfig, read_rows, run_benchmark, run_building,
                      run_example_2d, run_monte_carlo, run_two_mass_spring,
                      sample_size_table, write_rows)
from .weather import (SyntheticClimate, WeatherRecord, ingest_weather, read_weather,
                      synthetic_weather, write_weather)
