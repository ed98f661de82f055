"""Trajectory-based WiFi RSSI indoor localization with recurrent networks."""
