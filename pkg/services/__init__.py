"""Engine services: chain, cryptography, proofs and the two contracts."""
