"""Pilot-signal simulation: what each receiver actually observes.

Bridges the channel model and the trackers: applies transmit power splits,
device/node clock timing ramps, uplink co-channel interference from far-away
devices, downlink pilot contamination from neighboring nodes, and receiver
noise. Every snapshot is deterministic given (master seed, link ids, TTI).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .antenna import steering_vector, ue_array
from .channel import (ChannelModel, PilotTx, apply_timing_offset, dbm_to_watt,
                      received_pilot, subcarrier_offsets, thermal_noise_w)
from .geometry import bearing_in_frame
from .scenario import AnSite, Scenario, UeTrack


def make_static_track(ue_id: int, position, n_samples: int, frequency: float,
                      clock_offset: float = 0.0, tx_power_dbm: float = 10.0) -> UeTrack:
    """Stationary device track (used for uplink interferers)."""
    pos = np.tile(np.asarray(position, dtype=float), (n_samples, 1))
    zeros = np.zeros(n_samples)
    return UeTrack(id=ue_id, positions=pos, velocities=np.zeros((n_samples, 3)),
                   yaws=zeros, clock_offset=np.full(n_samples, clock_offset),
                   clock_drift=zeros, array=ue_array(frequency),
                   tx_power_dbm=tx_power_dbm)


def make_interferer_tracks(scenario: Scenario, n: int, radius: float, n_samples: int,
                           seed: int) -> list:
    """Devices on a ring around the map center, standing in for other-cell users."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x1F0)))
    cx, cy = scenario.bounds[0] / 2.0, scenario.bounds[1] / 2.0
    out = []
    for i in range(n):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        pos = [cx + radius * np.cos(ang), cy + radius * np.sin(ang), 1.5]
        out.append(make_static_track(10_000 + i, pos, n_samples,
                                     scenario.numerology.carrier_frequency,
                                     clock_offset=rng.normal(0.0, 1e-6)))
    return out


@dataclass
class PilotPlant:
    scenario: Scenario
    channel: ChannelModel
    ul_interferers: list

    def noise_var_an(self) -> float:
        return thermal_noise_w(self.scenario.numerology.subcarrier_spacing,
                               self.channel.config.an_noise_figure_db)

    def noise_var_ue(self) -> float:
        return thermal_noise_w(self.scenario.numerology.subcarrier_spacing,
                               self.channel.config.ue_noise_figure_db)

    def _clock_ramp(self, matrices, subcarriers, seconds):
        f_k = subcarrier_offsets(self.scenario.numerology, subcarriers)
        return apply_timing_offset(matrices, f_k, seconds)

    def ul_snapshot(self, an: AnSite, ue: UeTrack, tti: int, subcarriers,
                    port: int = 0, with_interference: bool = True):
        """Uplink RS snapshot at the node, (n_sc, an_ports), plus noise variance.

        The device transmit power is split evenly over the RS subcarriers;
        clock offsets of both ends ramp the observed phases.
        """
        subcarriers = np.atleast_1d(subcarriers)
        n_sc = len(subcarriers)
        amp = np.sqrt(dbm_to_watt(ue.tx_power_dbm) / n_sc)
        H = self.channel.synthesize(an, ue, tti, subcarriers).uplink()
        H = self._clock_ramp(H, subcarriers, ue.clock_offset[tti] - an.clock_offset)
        weights = np.zeros(H.shape[2], dtype=complex)
        weights[port] = amp
        txs = [PilotTx(H, weights, desired=True)]
        if with_interference:
            for itf in self.ul_interferers:
                t = min(tti, itf.n_samples - 1)
                Hi = self.channel.synthesize(an, itf, t, subcarriers).uplink()
                Hi = self._clock_ramp(Hi, subcarriers, itf.clock_offset[t] - an.clock_offset)
                wi = np.zeros(Hi.shape[2], dtype=complex)
                wi[0] = np.sqrt(dbm_to_watt(itf.tx_power_dbm) / n_sc)
                txs.append(PilotTx(Hi, wi, desired=False))
        rng = self.channel.noise_rng(an.id, ue.id, tti, 0xA)
        return received_pilot(txs, self.noise_var_an(), rng), self.noise_var_an()

    def ul_port_snapshots(self, an: AnSite, ue: UeTrack, tti: int,
                          port_subcarriers, with_interference: bool = True):
        """Per-port uplink snapshots for the joint tracker.

        ``port_subcarriers[j]`` is the subcarrier carrying device port j.
        Returns ((n_ports, an_ports) array, noise variance).
        """
        port_subcarriers = np.atleast_1d(port_subcarriers)
        n_ports = len(port_subcarriers)
        amp = np.sqrt(dbm_to_watt(ue.tx_power_dbm) / n_ports)
        H = self.channel.synthesize(an, ue, tti, port_subcarriers).uplink()
        H = self._clock_ramp(H, port_subcarriers, ue.clock_offset[tti] - an.clock_offset)
        rng = self.channel.noise_rng(an.id, ue.id, tti, 0xB)
        out = np.empty((n_ports, H.shape[1]), dtype=complex)
        for j in range(n_ports):
            out[j] = amp * H[j, :, j]
        if with_interference:
            for itf in self.ul_interferers:
                t = min(tti, itf.n_samples - 1)
                Hi = self.channel.synthesize(an, itf, t, port_subcarriers).uplink()
                Hi = self._clock_ramp(Hi, port_subcarriers, itf.clock_offset[t] - an.clock_offset)
                out += np.sqrt(dbm_to_watt(itf.tx_power_dbm) / n_ports) * Hi[:, :, 0]
        noise = self.noise_var_an()
        out += np.sqrt(noise / 2.0) * (rng.standard_normal(out.shape)
                                       + 1j * rng.standard_normal(out.shape))
        return out, noise

    def beam_weights(self, an: AnSite, azimuth: float, elevation: float,
                     power_w: float) -> np.ndarray:
        a = steering_vector(an.array, azimuth, elevation,
                            self.scenario.numerology.carrier_frequency)
        return np.sqrt(power_w) * a / np.linalg.norm(a)

    def beam_weights_toward(self, an: AnSite, target_position, power_w: float) -> np.ndarray:
        az, el, _ = bearing_in_frame(an.position, target_position, an.rotation())
        return self.beam_weights(an, az, el, power_w)

    def dl_snapshot(self, ue: UeTrack, an: AnSite, weights: np.ndarray, tti: int,
                    subcarrier: int, contaminators: list | None = None):
        """Downlink beamformed pilot at the device, (ue_ports,) plus noise var.

        ``contaminators`` holds (node, [beam weight vectors]) for neighboring
        nodes reusing the pilot resources.
        """
        sub = np.atleast_1d(subcarrier)
        H = self.channel.synthesize(an, ue, tti, sub).matrices
        H = self._clock_ramp(H, sub, an.clock_offset - ue.clock_offset[tti])
        txs = [PilotTx(H, weights, desired=True)]
        for other_an, beams in (contaminators or []):
            Ho = self.channel.synthesize(other_an, ue, tti, sub).matrices
            Ho = self._clock_ramp(Ho, sub, other_an.clock_offset - ue.clock_offset[tti])
            for wb in beams:
                txs.append(PilotTx(Ho, wb, desired=False))
        rng = self.channel.noise_rng(ue.id, an.id, tti, 0xC)
        y = received_pilot(txs, self.noise_var_ue(), rng)
        return y[0], self.noise_var_ue()
