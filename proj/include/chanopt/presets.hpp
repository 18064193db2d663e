#pragma once

// Built-in scenes. The same text ships as scenes/*.scene.

#include <chanopt/channel.hpp>

#include <cstdio>
#include <string>

namespace chanopt {

namespace detail {
inline std::string fmt_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}
}  // namespace detail

/// Desk-scale scene: 2x2 MIMO behind a 20-dipole wall, with a 4x4 RIS grid
/// around the receivers, 4 subbands over 0.9-1.1 GHz.
inline std::string desk_scene_text() {
  std::string s =
      "# desk-scale rich-scattering scene\n"
      "name = desk\n"
      "ntx = 2\n"
      "nrx = 2\n"
      "np = 16\n"
      "bands = 4\n"
      "f_lo_ghz = 0.9\n"
      "f_hi_ghz = 1.1\n"
      "ris_f_min_ghz = 0.82\n"
      "ris_f_max_ghz = 1.18\n"
      "f_res_tx = 1.0\n"
      "f_res_rx = 1.0\n"
      "f_res_scatterer = 1.0\n"
      "gamma_tx = 0.5\n"
      "gamma_rx = 0.5\n"
      "gamma_ris = 0.22\n"
      "gamma_scatterer = 0.015\n"
      "coupling_tx = 1.0\n"
      "coupling_rx = 1.0\n"
      "coupling_ris = 0.07\n"
      "coupling_scatterer = 0.33\n"
      "noise_overlay = 0\n"
      "tx_box = 0.05, 0.4, 0.4, 0.8\n"
      "probe_region = 0.985, -0.015, 2.185, 1.185\n"
      "rx_region_radius = 0.2\n"
      "dipole = tx, 0.35, 0.55\n"
      "dipole = tx, 0.35, 0.65\n"
      "dipole = rx, 1.6, 0.5\n"
      "dipole = rx, 1.6, 0.7\n";
  for (int i = 0; i < 20; ++i)
    s += "dipole = scatterer, 0.8, " + detail::fmt_coord(0.6 + 0.065 * (i - 9.5)) + "\n";
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      s += "dipole = ris, " + detail::fmt_coord(1.6 + 0.23 * (i - 1.5)) + ", " +
           detail::fmt_coord(0.6 + 0.23 * (j - 1.5)) + "\n";
  return s;
}

/// Larger scene: 3 TX, 4 RX and two RIS
/// groups totalling 45 elements with 3 tunable resonators each (N_p = 135).
inline std::string large_scene_text() {
  std::string s =
      "# large scene: two RIS groups, 45 elements x 3 resonators\n"
      "name = large\n"
      "ntx = 3\n"
      "nrx = 4\n"
      "np = 135\n"
      "params_per_element = 3\n"
      "ris_sub_spacing = 0.02\n"
      "bands = 4\n"
      "f_lo_ghz = 0.9\n"
      "f_hi_ghz = 1.1\n"
      "ris_f_min_ghz = 0.8\n"
      "ris_f_max_ghz = 1.2\n"
      "f_res_tx = 1.0\n"
      "f_res_rx = 1.0\n"
      "f_res_scatterer = 1.0\n"
      "gamma_tx = 0.5\n"
      "gamma_rx = 0.5\n"
      "gamma_ris = 0.05\n"
      "gamma_scatterer = 0.02\n"
      "noise_overlay = 0\n"
      "tx_box = 0.0, 0.0, 0.5, 1.5\n"
      "probe_region = 0.6, -0.8, 3.4, 2.8\n"
      "rx_region_radius = 0.25\n"
      "dipole = tx, 0.25, 0.3\n"
      "dipole = tx, 0.25, 0.75\n"
      "dipole = tx, 0.25, 1.2\n";
  for (int i = 0; i < 4; ++i) s += "dipole = rx, 2.6, " + detail::fmt_coord(0.45 + 0.2 * i) + "\n";
  for (int i = 0; i < 30; ++i) s += "dipole = scatterer, 1.2, " + detail::fmt_coord(-0.6 + 0.09 * i) + "\n";
  for (int i = 0; i < 23; ++i) s += "dipole = ris, " + detail::fmt_coord(0.8 + 0.09 * i) + ", 2.6\n";
  for (int i = 0; i < 22; ++i) s += "dipole = ris, " + detail::fmt_coord(0.8 + 0.09 * i) + ", -1.0\n";
  return s;
}

inline Environment desk_environment() { return parse_scene(desk_scene_text()); }
inline Environment large_environment() { return parse_scene(large_scene_text()); }

}  // namespace chanopt
