# otlabel package
# Optimal-transport pseudo-label assignment, supervision losses, data-quality metrics
