"""A handful of short traffic-safety notes shared by the demo scripts."""

from kgrag import Document

NOTES = {
    "flooding.md": """
Never drive into a Flooded Underpass. Thirty centimetres of moving water can float a car.
If water rises around the vehicle, switch on the hazard lights and move to higher ground.
<image src="img/underpass.png" caption="flooded underpass with a stalled car">
Wait for the road authority to reopen the route before you continue.
""",
    "tunnels.md": """
Inside a tunnel keep your headlights on and hold a safe following distance.
Do not change lanes unless signs allow it. In a fire, stop, switch off the engine,
leave the key and walk to the nearest emergency exit.
<image src="img/tunnel_exit.png" caption="green emergency exit sign in a tunnel">
""",
    "winter.md": """
Black ice forms on bridges first. Reduce speed before the bridge, avoid sudden braking
and keep both hands on the wheel. Fog lights help other drivers see you in fog,
but switch them off when visibility improves.
""",
}


def documents():
    return [Document(name, text.strip()) for name, text in sorted(NOTES.items())]
