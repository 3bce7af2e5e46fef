# Stages package for the hand-eye calibration pipeline
