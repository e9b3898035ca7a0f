"""Material law, mesh, finite element and solver implementations."""
