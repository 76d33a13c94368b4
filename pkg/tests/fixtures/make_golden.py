"""Regenerate golden/dataset.json, the 10-device labeling fixture.

Expected outcome against the bundled catalogs and keyword oracle (uniform config):
every device is right at rank 1 except d10 (vendor: xiaomi 3 matches vs wyze 2)
and d05 (function: camera 2/3 vs doorbell 1/2), which are right at rank 2.
"""

import json
from pathlib import Path

OUT = Path(__file__).parent / "golden" / "dataset.json"


def res(*pairs):
    return [{"rank": i, "title": t, "snippet": s, "url": f"https://example.org/{i}"} for i, (t, s) in enumerate(pairs, 1)]


DEVICES = [
    ("d01", "14:91:82:00:00:01", ("Belkin", "Plug"), {
        "hostname": {"wemo-plug": res(
            ("WeMo Smart Plug", "Belkin WeMo plug lets you switch any outlet from an app."),
            ("Belkin WeMo Mini", "A compact Wi-Fi smart plug by Belkin."))},
        "domains": {"xbcs.net": res(("xbcs.net cloud service", "api.xbcs.net is contacted by the WeMo after each on/off event."))},
    }),
    ("d02", "00:17:88:00:00:02", ("Philips", "Bulb"), {
        "hostname": {"philips-hue": res(("Philips Hue White bulb", "Philips Hue smart light bulb for any lamp."))},
        "domains": {"meethue.com": res(("meethue.com", "Philips Hue bridge and bulb portal."))},
    }),
    ("d03", None, ("Amazon", "Speaker"), {
        "hostname": {"amazon-echo": res(("Amazon Echo Dot", "Echo smart speaker with a voice assistant."))},
        "domains": {"amazon.com": res(("Amazon device metrics", "Telemetry endpoint used by Amazon devices."))},
    }),
    ("d04", None, ("Google", "Thermostat"), {
        "hostname": {"nest-thermostat": res(("Google Nest Learning Thermostat", "The Nest thermostat saves heating energy with smart temperature control."))},
    }),
    ("d05", None, ("Ring", "Doorbell"), {
        "domains": {"ring.com": res(("Ring Video Doorbell", "Ring video doorbell with HD camera."))},
    }),
    ("d06", None, ("iRobot", "Vacuum Cleaner"), {
        "hostname": {"roomba-694": res(("iRobot Roomba 694", "Roomba robot vacuum cleaner by iRobot."))},
    }),
    ("d07", None, ("TP-Link", "Router"), {
        "domains": {"tplinkcloud.com": res(("TP-Link Archer AX50 router", "TP-Link Wi-Fi router with mesh support."))},
    }),
    ("d08", None, ("Samsung", "Television"), {
        "hostname": {"samsung-tv": res(("Samsung Smart TV", "Samsung television running Tizen."))},
    }),
    ("d09", None, ("Sonos", "Speaker"), {
        "tls_issuers": {"sonos inc. device ca, sonos inc.": res(("Sonos One", "Sonos speaker with rich audio."))},
    }),
    ("d10", None, ("Wyze", "Camera"), {
        "domains": {"wyzecam.com": res(
            ("Xiaomi Mi Home Security Camera", "Xiaomi camera, an alternative to Wyze."),
            ("Wyze Cam v3", "Smart home camera with video."))},
    }),
]


def build():
    devices = []
    for did, mac, (vendor, function), enriched in DEVICES:
        features = {k: [] for k in ("hostname", "domains", "tls_issuers", "user_agents", "oui")}
        for t, values in enriched.items():
            features[t] = list(values)
        devices.append({
            "device_id": did,
            "mac": mac,
            "ground_truth": {"vendor": vendor, "function": function},
            "features": features,
            "enriched": enriched,
        })
    return {"devices": devices}


if __name__ == "__main__":
    OUT.write_text(json.dumps(build(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {OUT}")
