#include <stdio.h>
#include "lilypad.h"

int main(void) {
    const double coords[] = {1.0, 4.0};
    const double marks[] = {2.0, 8.0};
    LilypadPointSet *set = NULL;
    LilypadSolution *sol = NULL;
    if (lilypad_point_set_from_points(1, 2.0, 10.0, 0.5, coords, marks, 2, &set) != LILYPAD_STATUS_OK) return 1;
    if (lilypad_solve(set, 0.5, 10.0, &sol) != LILYPAD_STATUS_OK) return 2;
    lilypad_point_set_free(set);

    const double z[] = {6.0};
    double h = 0.0;
    if (lilypad_hitting_at(sol, z, 1, &h) != LILYPAD_STATUS_OK) return 3;
    LilypadMaximizer m;
    double pos[1];
    if (lilypad_maximizer(sol, 4.0, &m, pos, 1) != LILYPAD_STATUS_OK) return 4;
    printf("h=%.17g max=%zu xi=%.17g pos=%.17g\n", h, m.index, m.xi, pos[0]);

    double bad = 0.0;
    LilypadStatus st = lilypad_particles_at(sol, z, 1, 100.0, &bad);
    char msg[128];
    lilypad_last_error_message(msg, sizeof msg);
    printf("status=%d msg=%s\n", (int)st, msg);
    lilypad_solution_free(sol);
    return 0;
}
