# Services package for the hand-eye calibration toolkit
